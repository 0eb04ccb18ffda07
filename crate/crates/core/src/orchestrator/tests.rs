use super::*;
use crate::agents::{Templates, AGENT_ABSTRACTION, AGENT_DEBUG, AGENT_DECOMPOSE, AGENT_GENERATE};
use crate::gateway::{Gateway, Rule, RuleSet};
use crate::miniworld::{MiniWorld, Phase};

fn world() -> Arc<MiniWorld> {
    Arc::new(MiniWorld::bundled())
}

fn domains(w: &MiniWorld, phase: Phase) -> Vec<Domain> {
    w.pack().domains_in(phase).into_iter().cloned().collect()
}

fn engine_with(rules: RuleSet, repo: Repository) -> Engine {
    let w = world();
    Engine::new(EngineConfig::default(), Agents::new(Gateway::scripted(rules), Templates::bundled()), w, repo)
}

fn bundled_engine(repo: Repository) -> Engine {
    engine_with(RuleSet::bundled(), repo)
}

fn seeded() -> Repository {
    let w = world();
    let mut e = bundled_engine(Repository::new());
    let report = e.seed_repository(&domains(&w, Phase::Train));
    assert!(report.all_solved(), "{:?}", report.results.iter().map(|r| &r.error).collect::<Vec<_>>());
    let mut repo = e.into_repository();
    repo.set_mode(RepoMode::Evaluation);
    repo
}

fn rule(agent: &str, domain: &str, pattern: &str, reply: &str) -> Rule {
    Rule { agent: Some(agent.into()), domain: Some(domain.into()), ..Rule::new(pattern, reply) }
}

fn block(tag: &str, body: &str) -> String {
    format!("```{tag}\n{}\n```\n", body.trim_end())
}

fn pay() -> Domain {
    MiniWorld::bundled().pack().scenario("pay_transfer").unwrap().domain.clone()
}

fn pay_abstraction_rule(domain: &str) -> Rule {
    let r = RuleSet::bundled();
    let base = r.rules.iter().find(|r| r.agent.as_deref() == Some(AGENT_ABSTRACTION) && r.domain.as_deref() == Some("pay_transfer")).unwrap();
    rule(AGENT_ABSTRACTION, domain, "", &base.reply)
}

const PAY_OK: &str = "fn pay_transfer(recipient, amount, note) {\n    let cred = profile.credentials(app: \"pay\")\n    pay.login(username: cred.username, password: cred.password)\n    pay.transfer(to: recipient, amount: amount, note: note)\n}";
const PAY_SKIPS_PAT: &str = "fn pay_transfer(recipient, amount, note) {\n    let cred = profile.credentials(app: \"pay\")\n    pay.login(username: cred.username, password: cred.password)\n    if recipient != \"pat@web.io\" {\n        pay.transfer(to: recipient, amount: amount, note: note)\n    }\n}";

#[test]
fn seeding_merges_logins() {
    let repo = seeded();
    let names: Vec<String> = repo.validated().iter().map(|c| c.name.clone()).collect();
    assert_eq!(names, ["send_mail", "transfer_money", "add_song_by_title", "add_contact", "login_to_app"]);
    assert!(repo.learned().is_empty());
    assert_eq!(repo.archive().len(), 4);
    let all: Vec<String> = repo.archive().keys().cloned().collect();
    crate::cluster::archive_validates(&repo, &MiniWorld::bundled(), &all).unwrap();
    assert!(repo.archived("mail_send").unwrap().policy.source.contains("login_to_app(\"mail\")"));
}

#[test]
fn seeding_is_deterministic() {
    let (a, b) = (seeded(), seeded());
    assert_eq!(a.state_hash(), b.state_hash());
}

#[test]
fn empty_training_gives_empty_store() {
    let mut e = bundled_engine(Repository::new());
    let report = e.seed_repository(&[]);
    assert!(report.results.is_empty());
    assert!(e.repository().live_components().is_empty());
    assert_eq!(e.iterations(), 0);
}

#[test]
fn bundled_hcl_run_reuses_the_library() {
    let w = world();
    let mut e = bundled_engine(seeded());
    let report = e.run_suite(&domains(&w, Phase::Test), Mode::HclGp);
    assert!(report.all_solved());
    assert!(report.results.iter().all(|r| r.iterations == 1));
    assert_eq!(e.iterations(), 4);
    assert!(report.generalizations.is_empty());
    let learned: Vec<&str> = e.repository().learned().iter().map(|c| c.name.as_str()).collect();
    assert_eq!(learned, ["order_product", "chat_each"]);
}

#[test]
fn bundled_gp_run_needs_more_iterations() {
    let w = world();
    let mut e = bundled_engine(Repository::new());
    let report = e.run_suite(&domains(&w, Phase::Test), Mode::Gp);
    let iters: Vec<(String, usize, bool)> = report.results.iter().map(|r| (r.domain.clone(), r.iterations, r.solved())).collect();
    assert_eq!(
        iters,
        [
            ("mail_contact".to_string(), 2, true),
            ("pay_split".to_string(), 2, true),
            ("shop_order".to_string(), 4, false),
            ("chat_broadcast".to_string(), 3, true),
        ]
    );
    let shop = &report.results[2];
    assert_eq!(shop.passed_tasks(), 1);
    assert!(shop.tasks["shop_order-3"]);
    assert!(e.repository().live_components().is_empty());
    assert!(e.calls().iter().all(|c| c.op != "search" && c.op != "decompose" && c.op != "generalize"));
}

#[test]
fn solved_on_first_iteration() {
    let rules = RuleSet::new(vec![pay_abstraction_rule("pay_transfer"), rule(AGENT_GENERATE, "pay_transfer", "", &block("policy", PAY_OK))]);
    let mut e = engine_with(rules, Repository::new());
    let r = e.solve_domain(&pay(), Mode::Gp);
    assert!(r.solved());
    assert_eq!(r.iterations, 1);
    let kinds: Vec<EventKind> = e.events().iter().map(|e| e.kind).collect();
    assert_eq!(kinds, [EventKind::DebugIteration, EventKind::DomainSolved]);
    assert!(r.usage.input_tokens > 0);
}

#[test]
fn exhausted_budget_keeps_partial_credit() {
    let rules = RuleSet::new(vec![
        pay_abstraction_rule("pay_transfer"),
        rule(AGENT_GENERATE, "pay_transfer", "", &block("policy", PAY_SKIPS_PAT)),
        rule(AGENT_DEBUG, "pay_transfer", "", &block("policy", PAY_SKIPS_PAT)),
    ]);
    let mut e = engine_with(rules, Repository::new());
    let r = e.solve_domain(&pay(), Mode::HclGp);
    assert!(!r.solved());
    assert_eq!(r.iterations, 4);
    assert_eq!(r.passed_tasks(), 2);
    assert!(!r.tasks["pay_transfer-2"]);
    // unsolved domains are neither archived nor decomposed
    assert!(e.repository().archive().is_empty());
    assert!(e.calls().iter().all(|c| c.op != "decompose"));
}

#[test]
fn unparseable_replies_still_count() {
    let rules = RuleSet::new(vec![
        pay_abstraction_rule("pay_transfer"),
        rule(AGENT_GENERATE, "pay_transfer", "", "I am not sure."),
        rule(AGENT_DEBUG, "pay_transfer", "", &block("policy", PAY_OK)),
    ]);
    let mut e = engine_with(rules, Repository::new());
    let r = e.solve_domain(&pay(), Mode::Gp);
    // no policy to debug: every round regenerates
    assert!(!r.solved());
    assert_eq!(r.iterations, 4);
    assert!(r.error.is_some());
    assert_eq!(e.events().len(), 4);
}

#[test]
fn failed_abstraction_fails_the_domain() {
    let mut e = engine_with(RuleSet::new(vec![rule(AGENT_ABSTRACTION, "pay_transfer", "", "no blocks")]), Repository::new());
    let r = e.solve_domain(&pay(), Mode::Gp);
    assert!(!r.solved());
    assert_eq!(r.iterations, 0);
    assert!(r.error.unwrap().contains("steps"));
}

const LOGIN_TO_PAY: &str = "fn login_to_pay() {\n    let cred = profile.credentials(app: \"pay\")\n    pay.login(username: cred.username, password: cred.password)\n}";
const LOGIN_NOTE: &str = r#"{"name": "login_to_pay", "signature": "login_to_pay()", "description": "Log in to the pay app", "usage": "Call first."}"#;

fn decomposition(policy: &str) -> String {
    block("components", LOGIN_TO_PAY) + &block("usage-notes", LOGIN_NOTE) + &block("policy", policy)
}

const FORGETS_LOGIN: &str = "fn pay_transfer(recipient, amount, note) {\n    pay.transfer(to: recipient, amount: amount, note: note)\n}";
const CALLS_LOGIN: &str = "fn pay_transfer(recipient, amount, note) {\n    login_to_pay()\n    pay.transfer(to: recipient, amount: amount, note: note)\n}";

#[test]
fn learning_is_atomic() {
    // The updated policy forgets to log in, so the components are dropped.
    let broken = decomposition(FORGETS_LOGIN);
    let rules = RuleSet::new(vec![
        pay_abstraction_rule("pay_transfer"),
        rule(AGENT_GENERATE, "pay_transfer", "", &block("policy", PAY_OK)),
        rule(AGENT_DECOMPOSE, "pay_transfer", "", &broken),
    ]);
    let mut e = engine_with(rules, Repository::new());
    let r = e.solve_domain(&pay(), Mode::HclGp);
    assert!(r.solved());
    assert!(r.components_learned.is_empty());
    assert!(e.repository().live_components().is_empty());
    assert_eq!(e.repository().archived("pay_transfer").unwrap().policy.source.trim_end(), PAY_OK);
    assert_eq!(e.calls().iter().filter(|c| c.op == "decompose").count(), 4);
}

#[test]
fn decomposition_feedback_reaches_the_retry() {
    let broken = decomposition(FORGETS_LOGIN);
    let fixed = decomposition(CALLS_LOGIN);
    let rules = RuleSet::new(vec![
        pay_abstraction_rule("pay_transfer"),
        rule(AGENT_GENERATE, "pay_transfer", "", &block("policy", PAY_OK)),
        rule(AGENT_DECOMPOSE, "pay_transfer", "not logged in", &fixed),
        rule(AGENT_DECOMPOSE, "pay_transfer", "", &broken),
    ]);
    let mut e = engine_with(rules, Repository::new());
    let r = e.solve_domain(&pay(), Mode::HclGp);
    assert_eq!(r.components_learned.len(), 1);
    let archived = &e.repository().archived("pay_transfer").unwrap().policy;
    assert_eq!(archived.referenced_components, r.components_learned);
    // decomposition rounds are not policy iterations
    assert_eq!(r.iterations, 1);
}

fn pay_clone(n: usize) -> Domain {
    let mut d = pay();
    d.id = format!("pay_{n}");
    d
}

#[test]
fn one_generalization_pass_after_crossing_the_trigger() {
    // Six domains at four iterations each: the pass fires once, after the
    // fifth domain brings the counter to 20.
    let mut rules = Vec::new();
    for n in 1..=6 {
        let d = format!("pay_{n}");
        rules.push(pay_abstraction_rule(&d));
        rules.push(rule(AGENT_GENERATE, &d, "", &block("policy", PAY_SKIPS_PAT)));
        rules.push(rule(AGENT_DEBUG, &d, "Revision: 3", &block("policy", PAY_OK)));
        rules.push(rule(AGENT_DEBUG, &d, "", &block("policy", PAY_SKIPS_PAT)));
        rules.push(rule(AGENT_DECOMPOSE, &d, "", "```components\n```"));
    }
    rules.push(Rule { agent: Some("generalize".into()), ..Rule::new("", "```components\n```\n```replaced\n```") });
    let mut e = engine_with(RuleSet::new(rules), Repository::new());
    let ds: Vec<Domain> = (1..=6).map(pay_clone).collect();
    let report = e.run_suite(&ds, Mode::HclGp);
    assert!(report.all_solved());
    assert!(report.results.iter().all(|r| r.iterations == 4));
    assert_eq!(report.generalizations.len(), 1);
    let passes: Vec<&RunEvent> = e.events().iter().filter(|e| e.kind == EventKind::GeneralizationPass).collect();
    assert_eq!(passes.len(), 1);
    assert_eq!(passes[0].domain, "pay_5");
    assert_eq!(passes[0].iteration, 20);

    let ordinals: Vec<u64> = e.events().iter().map(|e| e.ordinal).collect();
    assert!(ordinals.windows(2).all(|w| w[0] < w[1]));
    assert!(e.events().windows(2).all(|w| w[0].iteration <= w[1].iteration && w[0].input_tokens <= w[1].input_tokens));
}

#[test]
fn gp_mode_never_generalizes() {
    let mut rules = Vec::new();
    for n in 1..=6 {
        let d = format!("pay_{n}");
        rules.push(pay_abstraction_rule(&d));
        rules.push(rule(AGENT_GENERATE, &d, "", &block("policy", PAY_SKIPS_PAT)));
        rules.push(rule(AGENT_DEBUG, &d, "", &block("policy", PAY_SKIPS_PAT)));
    }
    let mut e = engine_with(RuleSet::new(rules), Repository::new());
    let ds: Vec<Domain> = (1..=6).map(pay_clone).collect();
    let report = e.run_suite(&ds, Mode::Gp);
    assert_eq!(e.iterations(), 24);
    assert!(report.generalizations.is_empty());
    assert!(e.calls().iter().all(|c| ["abstract", "generate", "debug"].contains(&c.op.as_str())));
}

#[test]
fn mode_parses() {
    assert_eq!("gp".parse::<Mode>().unwrap(), Mode::Gp);
    assert_eq!("hclgp".parse::<Mode>().unwrap(), Mode::HclGp);
    assert!("hcl".parse::<Mode>().is_err());
    assert_eq!(Mode::HclGp.to_string(), "hclgp");
}


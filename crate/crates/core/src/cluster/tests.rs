use proptest::prelude::*;

use super::*;
use crate::agents::{Templates, AGENT_GENERALIZE};
use crate::gateway::{Gateway, Rule, RuleSet};
use crate::miniworld::MiniWorld;
use crate::repository::ComponentDraft;
use crate::retrieval::NgramEmbedder;

fn v(raw: &[f64]) -> EmbeddingVector<f64> {
    EmbeddingVector::normalized(raw.to_vec()).unwrap()
}

fn id(n: u64) -> ComponentId {
    ComponentId::from_ordinal(n)
}

fn embed(text: &str) -> EmbeddingVector<f64> {
    Embedder::<f64>::embed(&NgramEmbedder::default(), text).unwrap()
}

#[test]
fn identical_pair_and_orthogonal_vector() {
    let body = "fn login_to_mail() { mail.login(username: \"a\", password: \"b\") }";
    let (a, b) = (embed(body), embed(body));
    // orthogonal to a: a single bucket that a leaves empty
    let empty = a.as_slice().iter().position(|x| *x == 0.0).unwrap();
    let mut raw = vec![0.0; a.dim()];
    raw[empty] = 1.0;
    let c = v(&raw);
    assert!(a.cosine(&b) > 1.0 - 1e-12);
    assert_eq!(a.cosine(&c), 0.0);
    let clusters = greedy_cluster(&[(id(1), a), (id(2), b), (id(3), c)], 0.85);
    let groups: Vec<Vec<ComponentId>> = clusters.iter().map(|c| c.members.clone()).collect();
    assert_eq!(groups, [vec![id(1), id(2)], vec![id(3)]]);
}

#[test]
fn threshold_one_gives_singletons() {
    let texts = ["send mail", "transfer money", "add a song", "log in to chat", "search contacts"];
    let items: Vec<_> = texts.iter().enumerate().map(|(i, t)| (id(i as u64), embed(t))).collect();
    assert_eq!(greedy_cluster(&items, 1.0).len(), texts.len());
}

#[test]
fn empty_input_no_clusters() {
    assert!(greedy_cluster::<f64>(&[], 0.85).is_empty());
}

#[test]
fn joins_first_matching_seed() {
    // b is close to both seeds; it joins the earlier one.
    let items = vec![(id(1), v(&[1.0, 0.0])), (id(2), v(&[0.0, 1.0])), (id(3), v(&[1.0, 1.0]))];
    let c = greedy_cluster(&items, 0.7);
    assert_eq!(c[0].members, [id(1), id(3)]);
    assert_eq!(c[1].members, [id(2)]);
}

proptest! {
    #[test]
    fn clusters_cover_disjoint_and_respect_tau(
        raw in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 4), 0..40),
        tau in 0.0f64..1.0,
    ) {
        let items: Vec<_> = raw
            .iter()
            .enumerate()
            .filter_map(|(i, r)| EmbeddingVector::normalized(r.clone()).ok().map(|v| (id(i as u64), v)))
            .collect();
        let clusters = greedy_cluster(&items, tau);
        let mut seen = BTreeSet::new();
        for c in &clusters {
            prop_assert_eq!(&c.members[0], &c.seed);
            for m in &c.members {
                prop_assert!(seen.insert(m.clone()));
                let mv = &items.iter().find(|(i, _)| i == m).unwrap().1;
                prop_assert!(c.seed_vector.cosine(mv) >= tau);
            }
        }
        prop_assert_eq!(seen.len(), items.len());
        prop_assert_eq!(greedy_cluster(&items, tau), clusters);
    }
}

// ---- generalization ----

fn login_draft(app: &str) -> ComponentDraft {
    ComponentDraft {
        name: format!("login_to_{app}"),
        signature: format!("login_to_{app}()").parse().unwrap(),
        body: format!(
            "fn login_to_{app}() {{\n    let cred = profile.credentials(app: \"{app}\")\n    {app}.login(username: cred.username, password: cred.password)\n}}"
        ),
        description: format!("Sign in to the {app} app with the username and password stored in the user profile credentials"),
        usage_info: format!("Call once before any other {app} api."),
    }
}

const MAIL_SRC: &str = "fn mail_send(recipient, subject, body) {\n    login_to_mail()\n    mail.send(to: recipient, subject: subject, body: body)\n}\n";
const PAY_SRC: &str = "fn pay_transfer(recipient, amount, note) {\n    login_to_pay()\n    pay.transfer(to: recipient, amount: amount, note: note)\n}\n";

fn archive(repo: &mut Repository, domain: &str, source: &str, component: &ComponentId) {
    let world = MiniWorld::bundled();
    let s = world.pack().scenario(domain).unwrap();
    let name = repo.get(component).unwrap().name.clone();
    let policy = Policy::new(s.reference.signature.clone(), source, vec![(component.clone(), name)]).unwrap();
    repo.archive_policy(ArchivedPolicy { domain: s.domain.clone(), policy, bindings: s.reference.bindings.clone() });
}

/// login_to_mail / login_to_pay learned from two archived domains.
fn login_fixture() -> Repository {
    let mut repo = Repository::new();
    let m = repo.add_learned(login_draft("mail"), "mail_send").unwrap();
    let p = repo.add_learned(login_draft("pay"), "pay_transfer").unwrap();
    archive(&mut repo, "mail_send", MAIL_SRC, &m);
    archive(&mut repo, "pay_transfer", PAY_SRC, &p);
    repo
}

fn agents(replies: &[&str]) -> Agents {
    let rules = replies
        .iter()
        .enumerate()
        .map(|(i, r)| Rule {
            agent: Some(AGENT_GENERALIZE.into()),
            requires: if replies.len() > 1 { vec![format!("Attempt: {}", i + 1)] } else { vec![] },
            ..Rule::new("", *r)
        })
        .collect();
    Agents::new(Gateway::scripted(RuleSet::new(rules)), Templates::bundled())
}

const MERGE: &str = r#"```components
fn login_to_app(app) {
    let cred = profile.credentials(app: app)
    app.login(username: cred.username, password: cred.password)
}
```
```usage-notes
{"name": "login_to_app", "signature": "login_to_app(app: string)", "description": "Log in to an app with the stored profile credentials", "usage": "Call with the app name before its apis."}
```
```replaced
cmp-0001
cmp-0002
```
```policy mail_send
fn mail_send(recipient, subject, body) {
    login_to_app("mail")
    mail.send(to: recipient, subject: subject, body: body)
}
```
```policy pay_transfer
fn pay_transfer(recipient, amount, note) {
    login_to_app("pay")
    pay.transfer(to: recipient, amount: amount, note: note)
}
```"#;

const KEEP: &str = "```components\n```\n```replaced\n```";

fn login_cluster(repo: &Repository) -> Cluster<f64> {
    let items: Vec<_> = repo.live_components().iter().map(|c| (c.id.clone(), embed(&c.embedding_text()))).collect();
    let clusters = greedy_cluster(&items, 0.85);
    assert_eq!(clusters.len(), 1, "login components should share one cluster at 0.85");
    clusters[0].clone()
}

#[test]
fn login_pair_is_one_cluster() {
    let repo = login_fixture();
    let c: Vec<&Component> = repo.live_components();
    let cos = embed(&c[0].embedding_text()).cosine(&embed(&c[1].embedding_text()));
    assert!(cos >= 0.85, "cosine {cos}");
}

#[test]
fn merge_into_login_to_app_is_accepted() {
    let mut repo = login_fixture();
    let world = MiniWorld::bundled();
    let before = repo.live_components().len();
    let cluster = login_cluster(&repo);
    let r = generalize_cluster(&mut repo, &cluster, &agents(&[MERGE]), &world, 3);
    assert!(r.accepted, "{:?}", r.last_failure);
    assert_eq!(r.attempts, 1);
    assert_eq!(repo.live_components().len(), before - 1);
    assert_eq!(r.replaced.len(), 2);
    let merged = repo.get(&r.generalized[0]).unwrap();
    assert_eq!(merged.name, "login_to_app");
    assert_eq!(repo.stored(&merged.id).unwrap().store, StoreKind::Validated);
    assert_eq!(repo.archived("mail_send").unwrap().policy.referenced_components, r.generalized);
    archive_validates(&repo, &world, &["mail_send".into(), "pay_transfer".into()]).unwrap();
}

#[test]
fn failing_proposal_is_rejected_atomically() {
    let mut repo = login_fixture();
    let world = MiniWorld::bundled();
    let broken = MERGE.replace("login_to_app(\"pay\")\n", "");
    let hash = repo.state_hash();
    let cluster = login_cluster(&repo);
    let r = generalize_cluster(&mut repo, &cluster, &agents(&[&broken]), &world, 3);
    assert!(!r.accepted);
    assert_eq!(r.attempts, 4);
    assert!(r.last_failure.as_deref().unwrap().contains("not logged in"), "{:?}", r.last_failure);
    assert_eq!(repo.state_hash(), hash);
    assert_eq!(repo.learned().len(), 2);
}

#[test]
fn dropping_a_caller_update_is_rejected() {
    // Replacing login_to_pay without rewriting pay_transfer leaves it dangling.
    let mut repo = login_fixture();
    let world = MiniWorld::bundled();
    let partial = MERGE.split("```policy pay_transfer").next().unwrap().to_string();
    let hash = repo.state_hash();
    let cluster = login_cluster(&repo);
    let r = generalize_cluster(&mut repo, &cluster, &agents(&[&partial]), &world, 0);
    assert!(!r.accepted);
    assert!(r.last_failure.unwrap().contains("pay_transfer"));
    assert_eq!(repo.state_hash(), hash);
}

#[test]
fn feedback_reaches_the_next_attempt() {
    let mut repo = login_fixture();
    let world = MiniWorld::bundled();
    let broken = MERGE.replace("login_to_app(\"pay\")\n", "");
    let cluster = login_cluster(&repo);
    let ag = agents(&["garbage ```", &broken, MERGE]);
    let r = generalize_cluster(&mut repo, &cluster, &ag, &world, 3);
    assert!(r.accepted);
    assert_eq!(r.attempts, 3);
}

#[test]
fn keep_as_is_promotes_unchanged() {
    let mut repo = login_fixture();
    let world = MiniWorld::bundled();
    let cluster = login_cluster(&repo);
    let r = generalize_cluster(&mut repo, &cluster, &agents(&[KEEP]), &world, 3);
    assert!(r.accepted);
    assert!(r.replaced.is_empty());
    assert!(repo.learned().is_empty());
    assert_eq!(repo.validated().len(), 2);
}

fn helper(name: &str, text: &str) -> ComponentDraft {
    ComponentDraft {
        name: name.into(),
        signature: format!("{name}()").parse().unwrap(),
        body: format!("fn {name}() {{\n    profile.credentials(app: \"mail\")\n}}"),
        description: text.into(),
        usage_info: String::new(),
    }
}

#[test]
fn union_of_learned_and_validated_forms_three_clusters() {
    let groups = [
        "Look up the stored profile credentials for the mail application",
        "Search the music catalogue for a song title and return its id",
        "Checkout the shopping cart and place a new order",
    ];
    let mut repo = Repository::new();
    // 4 validated: two of the first group, two of the second
    let v = repo
        .add_learned_batch(
            vec![helper("a_one", groups[0]), helper("a_two", groups[0]), helper("b_one", groups[1]), helper("b_two", groups[1])],
            "seed",
        )
        .unwrap();
    repo.promote(vec![], &v, &[]).unwrap();
    // 6 learned: two of each group
    let names = ["a_three", "a_four", "b_three", "b_four", "c_one", "c_two"];
    for (i, n) in names.iter().enumerate() {
        repo.add_learned(helper(n, groups[i / 2]), "d").unwrap();
    }
    assert_eq!((repo.learned().len(), repo.validated().len()), (6, 4));
    let report = run_generalization(&mut repo, &agents(&[KEEP]), &MiniWorld::bundled(), &EngineConfig::default());
    assert_eq!(report.clusters.len(), 3);
    assert_eq!(report.clusters.iter().map(|c| c.members.len()).collect::<Vec<_>>(), [4, 4, 2]);
    assert_eq!((report.accepted, report.rejected, report.merged, report.iterations), (3, 0, 0, 3));
    assert!(repo.learned().is_empty());
}

#[test]
fn validated_store_alone_is_still_clustered() {
    let mut repo = Repository::new();
    let ids = repo.add_learned_batch(vec![login_draft("mail")], "x").unwrap();
    repo.promote(vec![], &ids, &[]).unwrap();
    let report = run_generalization(&mut repo, &agents(&[KEEP]), &MiniWorld::bundled(), &EngineConfig::default());
    assert_eq!(report.clusters.len(), 1);
}

#[test]
fn rejected_cluster_keeps_members_where_they_were() {
    let mut repo = login_fixture();
    let hash = repo.state_hash();
    let report =
        run_generalization(&mut repo, &agents(&["no blocks at all ```x"]), &MiniWorld::bundled(), &EngineConfig::default());
    assert_eq!((report.accepted, report.rejected, report.iterations), (0, 1, 4));
    assert_eq!(repo.state_hash(), hash);
}

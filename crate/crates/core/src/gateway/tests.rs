use std::sync::atomic::{AtomicU32, Ordering};

use num_rational::Ratio;

use super::*;

fn meta(agent: &str, domain: &str) -> RequestMeta {
    RequestMeta { agent: agent.into(), domain: domain.into() }
}

fn ask(g: &Gateway, prompt: &str) -> Result<CompletionResponse, GatewayError> {
    g.complete(CompletionRequest::user(prompt, meta("abstraction", "pay_split")))
}

#[test]
fn rule_lookup() {
    let g = Gateway::scripted(RuleSet::new(vec![Rule::new("ABSTRACT", "R")]));
    assert_eq!(ask(&g, "please ABSTRACT this").unwrap().text, "R");
}

#[test]
fn unmatched_prompt_errors() {
    let g = Gateway::scripted(RuleSet::new(vec![Rule::new("ABSTRACT", "R")]));
    let err = ask(&g, "something else").unwrap_err();
    assert_eq!(err.to_string(), "no scripted reply");
    assert!(g.ledger().is_empty());
}

#[test]
fn empty_rule_set_always_errors() {
    let g = Gateway::scripted(RuleSet::default());
    for p in ["", "a", "ABSTRACT"] {
        assert_eq!(ask(&g, p).unwrap_err(), GatewayError::NoScriptedReply);
    }
}

#[test]
fn usage_comes_from_rule() {
    let g = Gateway::scripted(RuleSet::new(vec![Rule::new("X", "reply").tokens(1234, 56)]));
    assert_eq!(ask(&g, "X").unwrap().usage, Usage::new(1234, 56));
    assert_eq!(g.ledger().entries(), vec![LedgerEntry { agent: "abstraction".into(), domain: "pay_split".into(), usage: Usage::new(1234, 56) }]);
}

#[test]
fn usage_estimate_without_configured_counts() {
    let g = Gateway::scripted(RuleSet::new(vec![Rule::new("X", "12345")]));
    // 9 prompt chars -> 3 tokens, 5 reply chars -> 2 tokens (rounded up).
    assert_eq!(ask(&g, "X23456789").unwrap().usage, Usage::new(3, 2));
}

#[test]
fn earlier_rule_wins() {
    let g = Gateway::scripted(RuleSet::new(vec![Rule::new("AB", "first"), Rule::new("ABC", "second")]));
    assert_eq!(ask(&g, "ABC").unwrap().text, "first");
}

#[test]
fn requires_excludes_and_tags() {
    let mut specific = Rule::new("GEN", "with-login");
    specific.requires = vec!["login_to_app(".into()];
    let mut other_domain = Rule::new("GEN", "wrong-domain");
    other_domain.domain = Some("mail_send".into());
    let mut excluded = Rule::new("GEN", "excluded");
    excluded.excludes = vec!["skip-me".into()];
    let g = Gateway::scripted(RuleSet::new(vec![specific, other_domain, excluded, Rule::new("GEN", "fallback")]));
    assert_eq!(ask(&g, "GEN login_to_app(app)").unwrap().text, "with-login");
    assert_eq!(ask(&g, "GEN (none)").unwrap().text, "excluded");
    assert_eq!(ask(&g, "GEN skip-me").unwrap().text, "fallback");
}

#[test]
fn templated_reply_contains_domain_id() {
    let g = Gateway::scripted(RuleSet::new(vec![Rule::new("X", "policy for {domain} by {agent}")]));
    let reply = ask(&g, "X").unwrap().text;
    assert_eq!(reply, "policy for pay_split by abstraction");
}

#[test]
fn rules_load_from_toml() {
    let rules = RuleSet::from_toml(
        r#"
[[rule]]
match = "ABSTRACT"
requires = ["Domain: a"]
reply = """
two
lines"""
input_tokens = 10
output_tokens = 2
"#,
    )
    .unwrap();
    assert_eq!(rules.rules.len(), 1);
    assert_eq!(rules.rules[0].reply, "two\nlines");
    assert!(RuleSet::from_toml("[[rule]]\nmatch = 1").is_err());
    assert!(RuleSet::from_toml("[[rule]]\nmatch = \"a\"\nreply = \"b\"\ntypo = 1").is_err());
}

#[test]
fn pricing() {
    let f: PriceTable<f64> = PriceTable::new(3.0, 15.0);
    assert_eq!(cost([Usage::new(1_000_000, 1_000_000)].iter(), &f), 18.0);
    assert_eq!(cost(std::iter::empty(), &f), 0.0);
    let exact: PriceTable<Ratio<i64>> = PriceTable::from_config(&crate::model::EngineConfig::default());
    let two = [Usage::new(1000, 500), Usage::new(1000, 500)];
    assert_eq!(cost(two.iter(), &exact), Ratio::new(21, 1000));
    let single: PriceTable<f32> = PriceTable::new(3.0, 15.0);
    assert_eq!(cost([Usage::new(1_000_000, 0)].iter(), &single), 3.0f32);
}

#[test]
fn ledger_conservation() {
    let g = Gateway::scripted(RuleSet::new(vec![Rule::new("", "ok").tokens(1000, 500)]));
    let prices: PriceTable<Ratio<i64>> = PriceTable::new(Ratio::from_integer(3), Ratio::from_integer(15));
    ask(&g, "warmup").unwrap();
    let before = g.ledger().cost(&prices);
    for i in 0..5 {
        ask(&g, &format!("call {i}")).unwrap();
    }
    let delta = g.ledger().cost(&prices) - before;
    assert_eq!(delta, prices.price(&Usage::new(5000, 2500)));
}

#[test]
fn concurrent_appends_are_exact() {
    let g = Gateway::scripted(RuleSet::new(vec![Rule::new("", "ok").tokens(7, 3)]));
    std::thread::scope(|s| {
        for t in 0..8 {
            let g = &g;
            s.spawn(move || {
                for i in 0..50 {
                    ask(g, &format!("{t}-{i}")).unwrap();
                }
            });
        }
    });
    assert_eq!(g.ledger().len(), 400);
    assert_eq!(g.ledger().totals(), Usage::new(2800, 1200));
}

#[test]
fn mock_is_deterministic() {
    let rules = RuleSet::new(vec![Rule::new("a", "A {domain}"), Rule::new("", "rest")]);
    let run = || {
        let g = Gateway::scripted(rules.clone());
        let replies: Vec<String> = ["a1", "b", "ca"].iter().map(|p| ask(&g, p).unwrap().text).collect();
        (replies, g.ledger().entries())
    };
    assert_eq!(run(), run());
}

struct Flaky {
    failures: u32,
    calls: AtomicU32,
    error: BackendError,
}

impl Backend for Flaky {
    fn name(&self) -> &str {
        "flaky"
    }

    fn send(&self, _request: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        let n = self.calls.fetch_add(1, Ordering::SeqCst);
        if n < self.failures {
            Err(self.error.clone())
        } else {
            Ok(CompletionResponse { text: "done".into(), usage: Usage::new(10, 1) })
        }
    }
}

fn flaky(failures: u32, error: BackendError) -> Arc<Flaky> {
    Arc::new(Flaky { failures, calls: AtomicU32::new(0), error })
}

#[test]
fn rate_limits_are_retried_up_to_the_cap() {
    let limited = BackendError::RateLimited { retry_after_ms: None, billed: Usage::default() };
    let b = flaky(2, limited.clone());
    let g = Gateway::new(b.clone()).with_retry(RetryPolicy::immediate(3));
    assert_eq!(ask(&g, "x").unwrap().text, "done");
    assert_eq!(b.calls.load(Ordering::SeqCst), 3);

    let b = flaky(5, limited);
    let g = Gateway::new(b.clone()).with_retry(RetryPolicy::immediate(3));
    assert_eq!(ask(&g, "x").unwrap_err(), GatewayError::RateLimited { attempts: 3 });
    assert_eq!(b.calls.load(Ordering::SeqCst), 3);
    assert!(g.ledger().is_empty());
}

#[test]
fn billed_retries_cost_twice() {
    let b = flaky(1, BackendError::Transport { message: "reset".into(), billed: Usage::new(10, 1) });
    let g = Gateway::new(b).with_retry(RetryPolicy::immediate(2));
    ask(&g, "x").unwrap();
    assert_eq!(g.ledger().totals(), Usage::new(20, 2));
}

#[test]
fn malformed_replies_are_not_retried() {
    let b = flaky(1, BackendError::Malformed("bad".into()));
    let g = Gateway::new(b.clone()).with_retry(RetryPolicy::immediate(4));
    assert!(matches!(ask(&g, "x"), Err(GatewayError::Malformed(_))));
    assert_eq!(b.calls.load(Ordering::SeqCst), 1);
}

#[test]
fn backoff_is_bounded() {
    let p = RetryPolicy { max_attempts: 9, base_delay: Duration::from_millis(100), max_delay: Duration::from_millis(450) };
    let delays: Vec<u128> = (0..4).map(|a| p.delay(a, None).as_millis()).collect();
    assert_eq!(delays, [100, 200, 400, 450]);
    assert_eq!(p.delay(0, Some(300)).as_millis(), 300);
}

#[test]
fn config_file_and_env_overrides() {
    let cfg = GatewayConfig::from_toml(
        "backend = \"http\"\nmodel = \"m1\"\nmax_attempts = 2\n[http]\nendpoint = \"http://h/v1/chat/completions\"\n",
    )
    .unwrap();
    assert_eq!(cfg.backend, BackendKind::Http);
    assert_eq!(cfg.http.api_key_env, ENV_API_KEY);
    let env = |k: &str| match k {
        ENV_BACKEND => Some("mock".to_string()),
        ENV_MODEL => Some("m2".to_string()),
        _ => None,
    };
    let cfg = cfg.with_env(env).unwrap();
    assert_eq!((cfg.backend, cfg.model.as_str(), cfg.max_attempts), (BackendKind::Mock, "m2", 2));
    assert!(GatewayConfig::from_toml("bogus = 1").is_err());
    assert!(GatewayConfig::default().with_env(|k| (k == ENV_BACKEND).then(|| "carrier-pigeon".into())).is_err());
    assert_eq!(cfg.build().unwrap().backend_name(), "mock");
}

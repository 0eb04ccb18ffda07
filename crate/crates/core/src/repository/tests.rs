use num_rational::Ratio;
use proptest::prelude::*;

use super::*;
use crate::model::ParamType;

fn draft(name: &str, params: &[&str], body_stmt: &str, usage: &str) -> ComponentDraft {
    let sig = PolicySignature::new(name, params.iter().map(|p| (*p, ParamType::String)).collect()).unwrap();
    ComponentDraft {
        name: name.into(),
        body: format!("fn {name}({}) {{\n    {body_stmt}\n}}", params.join(", ")),
        signature: sig,
        description: format!("{name} helper"),
        usage_info: usage.into(),
    }
}

fn login(app: &str) -> ComponentDraft {
    draft(
        &format!("login_to_{app}"),
        &[],
        &format!("let c = profile.credentials(app: \"{app}\")\n    {app}.login(username: c.username, password: c.password)"),
        &format!("Call before using {app}."),
    )
}

#[test]
fn add_then_get() {
    let mut repo = Repository::new();
    let id = repo.add_learned(login("mail"), "mail_send").unwrap();
    let c = repo.get(&id).unwrap();
    assert_eq!(c.name, "login_to_mail");
    assert_eq!(c.provenance, Provenance::Learned);
    assert_eq!(c.origin_domains, ["mail_send"]);
    assert_eq!(repo.stored(&id).unwrap().store, StoreKind::Learned);
    assert_eq!(id, ComponentId::from_ordinal(1));
}

#[test]
fn learned_store_allows_duplicate_names() {
    let mut repo = Repository::new();
    repo.add_learned(login("mail"), "a").unwrap();
    let before = repo.learned().len();
    repo.add_learned(login("mail"), "b").unwrap();
    assert_eq!(repo.learned().len(), before + 1);
}

#[test]
fn bad_drafts_are_rejected() {
    let mut repo = Repository::new();
    let mut d = draft("f", &[], "return y", "");
    assert!(matches!(repo.add_learned(d.clone(), "x"), Err(RepoError::Parse { .. })));
    d.body = "fn g() { }".into();
    assert!(matches!(repo.add_learned(d.clone(), "x"), Err(RepoError::NameMismatch { .. })));
    d.body = "fn f(a) { }".into();
    assert!(matches!(repo.add_learned(d, "x"), Err(RepoError::SignatureMismatch(_))));
    let calls_missing = draft("f", &[], "helper()", "");
    assert!(matches!(repo.add_learned(calls_missing, "x"), Err(RepoError::UnknownCallee { .. })));
    assert!(repo.all().is_empty());
}

#[test]
fn batch_members_can_call_each_other() {
    let mut repo = Repository::new();
    let ids = repo
        .add_learned_batch(vec![login("mail"), draft("send_it", &["to"], "login_to_mail()\n    mail.send(to: to, subject: \"s\", body: \"b\")", "")], "d")
        .unwrap();
    assert_eq!(repo.get(&ids[1]).unwrap().depends_on, vec![ids[0].clone()]);
    assert_eq!(repo.closure(&ids[1..]), vec![ids[1].clone(), ids[0].clone()]);
    let resolver = repo.resolver_for(&ids[1..]);
    assert_eq!(resolver.keys().collect::<Vec<_>>(), ["login_to_mail", "send_it"]);
    let cyclic = vec![draft("a", &[], "b()", ""), draft("b", &[], "a()", "")];
    assert!(matches!(repo.add_learned_batch(cyclic, "d"), Err(RepoError::Cycle(_))));
}

fn generalized_login() -> ComponentDraft {
    ComponentDraft {
        name: "login_to_app".into(),
        signature: PolicySignature::new("login_to_app", vec![("app", ParamType::String)]).unwrap(),
        body: "fn login_to_app(app) {\n    let c = profile.credentials(app: app)\n    app.login(username: c.username, password: c.password)\n}".into(),
        description: "log in".into(),
        usage_info: "Call with the app name before using it.".into(),
    }
}

#[test]
fn promote_one_replacing_two() {
    let mut repo = Repository::new();
    let a = repo.add_learned(login("mail"), "mail_send").unwrap();
    let b = repo.add_learned(login("pay"), "pay_transfer").unwrap();
    let live_before = repo.live_components().len();
    let new = repo.promote(vec![generalized_login()], &[], &[a.clone(), b.clone()]).unwrap();
    assert_eq!(repo.live_components().len(), live_before - 1);
    let merged = repo.get(&new[0]).unwrap();
    assert_eq!(merged.provenance, Provenance::Learned);
    assert_eq!(merged.origin_domains, ["mail_send", "pay_transfer"]);
    assert!(repo.stored(&a).unwrap().tombstoned);
    assert_eq!(repo.index().len(), 1);
}

#[test]
fn merging_seed_components_marks_them_modified() {
    let mut repo = Repository::new();
    repo.set_mode(RepoMode::Seeding);
    let a = repo.add_learned(login("mail"), "mail_send").unwrap();
    repo.promote(vec![], std::slice::from_ref(&a), &[]).unwrap();
    assert_eq!(repo.get(&a).unwrap().provenance, Provenance::SeedUnchanged);
    repo.set_mode(RepoMode::Evaluation);
    let b = repo.add_learned(login("pay"), "pay_split").unwrap();
    let new = repo.promote(vec![generalized_login()], &[], &[a, b]).unwrap();
    assert_eq!(repo.get(&new[0]).unwrap().provenance, Provenance::SeedModified);
}

#[test]
fn collision_leaves_store_unchanged() {
    let mut repo = Repository::new();
    let a = repo.add_learned(login("mail"), "x").unwrap();
    repo.promote(vec![], &[a], &[]).unwrap();
    let b = repo.add_learned(login("mail"), "y").unwrap();
    let hash = repo.state_hash();
    assert!(matches!(repo.promote(vec![], std::slice::from_ref(&b), &[]), Err(RepoError::NameCollision(_))));
    assert!(matches!(repo.promote(vec![login("mail")], &[], &[]), Err(RepoError::NameCollision(_))));
    assert_eq!(repo.state_hash(), hash);
    assert_eq!(repo.stored(&b).unwrap().store, StoreKind::Learned);
}

#[test]
fn replacing_a_callee_of_a_survivor_is_refused() {
    let mut repo = Repository::new();
    let ids = repo
        .add_learned_batch(vec![login("mail"), draft("send_it", &[], "login_to_mail()", "")], "d")
        .unwrap();
    repo.promote(vec![], &ids, &[]).unwrap();
    let hash = repo.state_hash();
    let err = repo.promote(vec![generalized_login()], &[], &ids[..1]).unwrap_err();
    assert!(matches!(err, RepoError::DanglingDependent { .. }), "{err}");
    assert_eq!(repo.state_hash(), hash);
}

#[test]
fn summaries_never_show_bodies() {
    let mut repo = Repository::new();
    let id = repo.add_learned(login("mail"), "x").unwrap();
    let blocks = repo.summaries_for_prompt(&[id]);
    assert_eq!(blocks, ["- login_to_mail()\n  usage: Call before using mail."]);
    assert!(!blocks[0].contains("profile.credentials"));
    assert!(repo.summaries_for_prompt(&[]).is_empty());
}

#[test]
fn summaries_follow_the_given_order() {
    let mut repo = Repository::new();
    let drafts: Vec<ComponentDraft> = (0..20).map(|i| draft(&format!("step_{i:02}"), &[], "mail.inbox()", &format!("u{i}"))).collect();
    let mut ids = repo.add_learned_batch(drafts, "d").unwrap();
    ids.reverse();
    let blocks = repo.summaries_for_prompt(&ids);
    assert_eq!(blocks.len(), 20);
    for (b, i) in blocks.iter().zip((0..20).rev()) {
        assert!(b.starts_with(&format!("- step_{i:02}()")), "{b}");
    }
}

#[test]
fn tombstones_hidden_but_auditable() {
    let dir = tempfile::tempdir().unwrap();
    let mut repo = Repository::new();
    let a = repo.add_learned(login("mail"), "mail_send").unwrap();
    let b = repo.add_learned(login("pay"), "pay_transfer").unwrap();
    repo.promote(vec![generalized_login()], &[], &[a.clone(), b]).unwrap();
    assert!(repo.summaries_for_prompt(std::slice::from_ref(&a)).is_empty());
    let hits = repo.search("login to mail", 20).unwrap();
    assert!(hits.iter().all(|(id, _)| id != &a));
    repo.save(dir.path()).unwrap();
    let back = Repository::load(dir.path()).unwrap();
    assert!(back.stored(&a).unwrap().tombstoned);
    assert_eq!(back.get(&a).unwrap().name, "login_to_mail");
}

#[test]
fn persistence_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut repo = Repository::new();
    let ids = repo.add_learned_batch(vec![login("mail"), login("pay")], "d").unwrap();
    repo.promote(vec![], &ids[..1], &[]).unwrap();
    repo.record_usage("d", &ids, 3);
    repo.save(dir.path()).unwrap();
    let back = Repository::load(dir.path()).unwrap();
    assert_eq!(back.all(), repo.all());
    assert_eq!(back.usage(), repo.usage());
    assert_eq!(back.index(), repo.index());
    assert_eq!(back.state_hash(), repo.state_hash());
    let other = tempfile::tempdir().unwrap();
    back.save(other.path()).unwrap();
    for f in [COMPONENTS_FILE, USAGE_FILE, ARCHIVE_FILE, INDEX_FILE] {
        assert_eq!(fs::read(dir.path().join(f)).unwrap(), fs::read(other.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn usage_recorded_once_per_mode() {
    let mut repo = Repository::new();
    let ids = repo
        .add_learned_batch(vec![login("mail"), draft("send_it", &[], "login_to_mail()", "")], "d")
        .unwrap();
    repo.record_usage("dom", &ids[1..], 1);
    repo.record_usage("dom", &ids[1..], 2);
    let modes: Vec<(String, UsageMode)> = repo.usage().iter().map(|u| (u.component.to_string(), u.mode)).collect();
    assert_eq!(modes, [(ids[1].to_string(), UsageMode::Direct), (ids[0].to_string(), UsageMode::Indirect)]);
}

fn rec(c: u64, domain: &str, mode: UsageMode) -> UsageRecord {
    UsageRecord { component: ComponentId::from_ordinal(c), domain: domain.into(), mode, iteration: 0 }
}

#[test]
fn usage_stats_small_cases() {
    let avail = vec![(ComponentId::from_ordinal(1), Provenance::Learned)];
    let none = usage_stats::<f64>(&avail, &[], 3, UsageFilter::Any).unwrap();
    let l = &none[&Provenance::Learned];
    assert_eq!((l.total_used, l.utilization_pct, l.per_scenario_mean, l.reuse_rate, l.multi_use_pct), (0, 0.0, 0.0, 0.0, 0.0));
    let records: Vec<UsageRecord> = ["a", "b", "c"].iter().map(|d| rec(1, d, UsageMode::Direct)).collect();
    let all = usage_stats::<Ratio<i64>>(&avail, &records, 3, UsageFilter::Any).unwrap();
    let l = &all[&Provenance::Learned];
    assert_eq!(l.utilization_pct, Ratio::from_integer(100));
    assert_eq!(l.reuse_rate, Ratio::from_integer(3));
    assert_eq!(l.multi_use_pct, Ratio::from_integer(100));
    assert!(matches!(usage_stats::<f64>(&avail, &records, 0, UsageFilter::Any), Err(RepoError::NoScenarios)));
}

#[test]
fn direct_filter_drops_indirect_use() {
    let avail = vec![(ComponentId::from_ordinal(1), Provenance::SeedUnchanged)];
    let records = vec![rec(1, "a", UsageMode::Indirect)];
    let any = usage_stats::<f64>(&avail, &records, 1, UsageFilter::Any).unwrap();
    let direct = usage_stats::<f64>(&avail, &records, 1, UsageFilter::Direct).unwrap();
    assert_eq!(any[&Provenance::SeedUnchanged].total_used, 1);
    assert_eq!(direct[&Provenance::SeedUnchanged].total_used, 0);
}

proptest! {
    #[test]
    fn usage_identities(
        avail in prop::collection::vec(0u8..3, 1..30),
        uses in prop::collection::vec((0usize..30, 0u8..6, any::<bool>()), 0..80),
    ) {
        let available: Vec<(ComponentId, Provenance)> =
            avail.iter().enumerate().map(|(i, p)| (ComponentId::from_ordinal(i as u64), Provenance::ALL[*p as usize])).collect();
        let records: Vec<UsageRecord> = uses
            .iter()
            .filter(|(c, _, _)| *c < avail.len())
            .map(|(c, d, direct)| rec(*c as u64, &format!("s{d}"), if *direct { UsageMode::Direct } else { UsageMode::Indirect }))
            .collect();
        let stats = usage_stats::<Ratio<i64>>(&available, &records, 6, UsageFilter::Any).unwrap();
        for s in stats.values() {
            prop_assert!(s.total_used <= s.available);
            prop_assert!(s.multi_use_pct <= Ratio::from_integer(100));
            if s.total_used > 0 {
                prop_assert!(s.reuse_rate >= Ratio::from_integer(1));
            }
        }
    }
}

//! One PASS/FAIL line per acceptance criterion. Run with
//! `cargo test -p oobn --test acceptance`.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use common::{max_diff, random_lattice, ve_posterior};
use oobn::corpus::{self, RandomSpec};
use oobn::dsl::{parse_model, render_model};
use oobn::flatten::{build_flat_bn, enumerate_joint, verify_dsep, Evidence, FlatBN, VarId, ENUM_CAP};
use oobn::inference::JunctionTree;
use oobn::model::{compile, instantiate, instantiate_class, instantiate_with, load, GroundModel, Model};
use oobn::msbn::{compute_io_sets, ClassCache, HtOptions, Hypertree, UpTo};
use oobn::session::{iconize_class, RefineKind, RefinementOp, Session, SessionOptions};
use oobn::typesys::{check_subclass, TypeEnv};
use oobn::ErrorCode;

const ORACLE_TOL: f64 = 1e-6;
const ORACLE_BUDGET: Duration = Duration::from_secs(120);
const CROSS_TOL: f64 = 1e-6;
const UNIQUE_TOL: f64 = 1e-12;
const FIT_RESIDUAL: f64 = 0.05;
const ICON_TOL: f64 = 1e-9;
const REFINE_TOL: f64 = 1e-6;
const FUZZ_INPUTS: usize = 100_000;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn ctx<T, E: std::fmt::Debug>(r: Result<T, E>, what: &str) -> Result<T, String> {
    r.map_err(|e| format!("{what}: {e:?}"))
}

struct Built {
    gm: GroundModel,
    bn: FlatBN,
}

fn build(src: &str) -> Result<Built, String> {
    let model = ctx(load(src), "load")?;
    let gm = ctx(instantiate(&model), "instantiate")?;
    let bn = ctx(build_flat_bn(&model, &gm), "flatten")?;
    Ok(Built { gm, bn })
}

fn families() -> Vec<(String, String)> {
    [1, 2, 4, 8].iter().map(|&k| (format!("family-{k}"), corpus::family_source(k, 7))).collect()
}

fn corpus_models() -> Vec<(String, String)> {
    let mut all: Vec<(String, String)> = corpus::entries().into_iter().map(|(n, s)| (n.to_string(), s)).collect();
    all.extend(families());
    all
}

fn random_evidence(bn: &FlatBN, rng: &mut ChaCha8Rng, max: usize) -> Vec<(VarId, usize)> {
    let mut vars: Vec<VarId> = (0..bn.len()).collect();
    vars.shuffle(rng);
    let k = rng.gen_range(0..=max.min(bn.len().saturating_sub(1)));
    vars[..k].iter().map(|&v| (v, rng.gen_range(0..bn.vars[v].card()))).collect()
}

// ---------------------------------------------------------------------------

fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let (mut queries, mut worst) = (0usize, 0.0f64);
    for seed in 0..500u64 {
        let b = build(&corpus::random_model(seed, RandomSpec::default()))?;
        ensure!(b.bn.len() <= 14, "seed {seed}: {} variables", b.bn.len());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ev = random_evidence(&b.bn, &mut rng, 3);
        let evm: Evidence = ev.iter().copied().collect();
        let mut jt = ctx(JunctionTree::new(&b.bn), "jt")?;
        let mut ht = ctx(Hypertree::build(&b.gm, &b.bn, HtOptions::default(), None), "hypertree")?;
        for &(v, x) in &ev {
            ctx(jt.set_evidence(v, x), "jt evidence")?;
            ctx(ht.set_evidence(v, x), "ht evidence")?;
        }
        for v in (0..b.bn.len()).filter(|v| !evm.contains_key(v)) {
            let truth = ctx(enumerate_joint(&b.bn, &evm, &[v], ENUM_CAP), "enumerate")?.table;
            let a = ctx(jt.query(&[v]), "jt query")?.table;
            let h = ctx(ht.query(&[v]), "ht query")?.0.table;
            worst = worst.max(max_diff(&truth, &a)).max(max_diff(&truth, &h));
            queries += 1;
        }
    }
    let took = start.elapsed();
    ensure!(worst < ORACLE_TOL, "max deviation {worst:e}");
    ensure!(took < ORACLE_BUDGET, "took {took:?}");
    Ok(format!("500 models, {queries} posteriors, max |diff| {worst:.1e}, {:.1}s", took.as_secs_f64()))
}

fn engine_cross_check() -> Outcome {
    let mut report = Vec::new();
    let mut worst = 0.0f64;
    for (name, src) in corpus_models() {
        let b = build(&src)?;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut jt = ctx(JunctionTree::new(&b.bn), "jt")?;
        let mut ht = ctx(Hypertree::build(&b.gm, &b.bn, HtOptions::default(), None), "hypertree")?;
        let (mut sets, mut impossible) = (0, 0);
        while sets < 100 {
            let mut ev = random_evidence(&b.bn, &mut rng, 4);
            if ev.is_empty() {
                ev.push((0, 0));
            }
            for &(v, x) in &ev {
                ctx(jt.set_evidence(v, x), "jt evidence")?;
                ctx(ht.set_evidence(v, x), "ht evidence")?;
            }
            match jt.calibrate() {
                Err(e) if e.has_code(ErrorCode::ZeroProb) => impossible += 1,
                Err(e) => return Err(format!("{name}: {e}")),
                Ok(()) => {
                    sets += 1;
                    for v in (0..b.bn.len()).filter(|v| !ev.iter().any(|e| e.0 == *v)) {
                        let a = ctx(jt.query(&[v]), "jt query")?.table;
                        let h = ctx(ht.query(&[v]), "ht query")?.0.table;
                        worst = worst.max(max_diff(&a, &h));
                    }
                }
            }
            for &(v, _) in &ev {
                jt.retract_evidence(v);
                ht.retract_evidence(v);
            }
        }
        report.push(format!("{name}({impossible} impossible skipped)"));
    }
    ensure!(worst < CROSS_TOL, "max deviation {worst:e}");
    Ok(format!("{} x 100 evidence sets, max |diff| {worst:.1e}; {}", report.len(), report.join(", ")))
}

/// A one-box class: In -> H -> O, with the box read by Z outside.
const DSEP_COUNTEREXAMPLE: &str = "
type B = {t, f};
class K {
    input In: B;
    private H: B given (i: B) { (t): 0.8 0.2; (f): 0.3 0.7; }
    H.i <- In;
    output O: B given (h: B) { (t): 0.9 0.1; (f): 0.4 0.6; }
    O.h <- H;
}
situation S {
    private A: B { 0.35 0.65 }
    private X: K;
    X.In <- A;
    private Z: B given (o: B) { (t): 0.7 0.3; (f): 0.1 0.9; }
    Z.o <- X.O;
}";

fn internals_and_io(b: &Built) -> Vec<(String, Vec<VarId>, Vec<VarId>)> {
    let io = compute_io_sets(&b.gm, &b.bn);
    b.gm.complex_ids()
        .map(|id| {
            let set = io.get(&id).map(|s| s.all()).unwrap_or_default();
            let inside: Vec<VarId> = b
                .gm
                .subtree(id)
                .into_iter()
                .filter_map(|o| b.bn.of_obj(o))
                .filter(|v| !set.contains(v))
                .collect();
            (b.gm.obj(id).path.clone(), inside, set.into_iter().collect())
        })
        .collect()
}

fn dsep_structure() -> Outcome {
    let mut checked = 0;
    let mut models = corpus_models();
    models.extend((0..100).map(|s| (format!("random-{s}"), corpus::random_model(s, RandomSpec::default()))));
    for (name, src) in &models {
        let b = build(src)?;
        for (path, inside, sep) in internals_and_io(&b) {
            ensure!(verify_dsep(&b.bn, &inside, &sep), "{name}: I/O-set of {path} does not separate");
            checked += 1;
        }
    }
    let b = build(DSEP_COUNTEREXAMPLE)?;
    let (_, inside, sep) = internals_and_io(&b).into_iter().find(|(p, ..)| p == "Situation.X").unwrap();
    ensure!(sep.len() == 2 && verify_dsep(&b.bn, &inside, &sep), "counterexample I/O-set is {sep:?}");
    for drop in &sep {
        let cut: Vec<VarId> = sep.iter().copied().filter(|v| v != drop).collect();
        ensure!(!verify_dsep(&b.bn, &inside, &cut), "still separated without {}", b.bn.vars[*drop].id);
    }
    Ok(format!("{checked} objects over {} models separated; both single-variable mutations detected", models.len()))
}

fn uniqueness() -> Outcome {
    let base_src = corpus::accident_model();
    let proj: Vec<String> = ["Driver.Age", "Driver.Gender", "Driver.Income", "Driver.Driving-Skill", "Driver.Aggressive"]
        .iter()
        .chain(&["Weather.Precipitation", "Weather.Temperature", "Weather.Wetness"])
        .chain(&["Road.Location", "Road.Condition", "Road.Speed-Limit"])
        .map(|p| format!("Situation.{p}"))
        .collect();
    let joint = |src: &oobn::dsl::ModelSource| -> Result<(Vec<f64>, BTreeMap<String, Vec<f64>>), String> {
        let m = ctx(compile(src), "compile")?;
        let gm = ctx(instantiate(&m), "instantiate")?;
        let bn = ctx(build_flat_bn(&m, &gm), "flatten")?;
        let t: Vec<VarId> = proj.iter().map(|p| bn.index(p).ok_or(format!("no {p}"))).collect::<Result<_, _>>()?;
        let j = ctx(enumerate_joint(&bn, &Evidence::new(), &t, ENUM_CAP), "enumerate")?.table;
        let mut jt = ctx(JunctionTree::new(&bn), "jt")?;
        let mut marg = BTreeMap::new();
        for v in 0..bn.len() {
            marg.insert(bn.vars[v].id.clone(), ctx(jt.query(&[v]), "query")?.table);
        }
        Ok((j, marg))
    };
    let (j0, m0) = joint(&base_src)?;
    let mut worst = 0.0f64;
    for seed in 0..10 {
        let r = corpus::reorder_declarations(&base_src, seed);
        ensure!(render_model(&r) != render_model(&base_src), "seed {seed} did not reorder");
        let reparsed = ctx(parse_model(&render_model(&r)), "reparse")?;
        let (j, m) = joint(&reparsed)?;
        worst = worst.max(max_diff(&j0, &j));
        ensure!(m.keys().eq(m0.keys()), "seed {seed}: different variables");
        for (k, v) in &m {
            worst = worst.max(max_diff(&m0[k], v));
        }
    }
    ensure!(worst < UNIQUE_TOL, "max deviation {worst:e}");
    Ok(format!("10 reorderings, {}-variable projection joint and all marginals, max |diff| {worst:.1e}", proj.len()))
}

fn car_cost(r: &oobn::msbn::CostReport, i: usize) -> u64 {
    let p = format!("Situation.Car{i}");
    r.subnets.iter().filter(|s| s.path == p || s.path.starts_with(&format!("{p}."))).map(|s| s.cells).sum()
}

fn scaling() -> Outcome {
    let ks = [1usize, 2, 4, 8];
    let mut ys = Vec::new();
    let mut lines = Vec::new();
    for &k in &ks {
        let b = build(&corpus::family_source(k, 7))?;
        let mut off = ctx(Hypertree::build(&b.gm, &b.bn, HtOptions { caching: false }, None), "hypertree")?;
        let r = ctx(off.calibrate(UpTo::All), "calibrate")?;
        ys.push(r.total_cells as f64);

        let cache = ClassCache::new();
        let mut on = ctx(Hypertree::build(&b.gm, &b.bn, HtOptions { caching: true }, Some(cache.clone())), "hypertree")?;
        let r = ctx(on.calibrate(UpTo::Subnet(0)), "collect")?;
        let costs: Vec<u64> = (1..=k).map(|i| car_cost(&r, i)).collect();
        let paid = costs.iter().filter(|&&c| c > 0).count();
        ensure!(paid == 1, "k={k}: car subtree collect paid {paid} times {costs:?}");
        ensure!(r.cache_hits == (k - 1) as u64, "k={k}: {} cache hits", r.cache_hits);
        lines.push(format!("k={k}: {} cells off, car {} once, {} hits", ys.last().unwrap(), costs.iter().max().unwrap(), r.cache_hits));
    }
    let n = ks.len() as f64;
    let xs: Vec<f64> = ks.iter().map(|&k| k as f64).collect();
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let a = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
    let b = my - a * mx;
    let r: Vec<f64> = xs.iter().zip(&ys).map(|(x, y)| (a * x + b) - y).collect();
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let resid = norm(&r) / norm(&ys);
    let pointwise = r.iter().zip(&ys).map(|(r, y)| r.abs() / y).fold(0.0, f64::max);
    ensure!(resid < FIT_RESIDUAL, "linear fit a={a:.1} b={b:.1} has relative residual {resid:.4}");
    Ok(format!(
        "fit {a:.1}k{b:+.1}, relative residual |r|/|y| {resid:.4} (largest single point {pointwise:.4}); {}",
        lines.join("; ")
    ))
}

/// max |P(outs | leaves)| difference between `class` in `m` and `icon` in `m2`.
fn iconized_gap(m: &Model, class: &str, m2: &Model, icon: &str) -> Result<f64, String> {
    let side = |m: &Model, c: &str| -> Result<(FlatBN, Vec<VarId>, Vec<VarId>), String> {
        let gm = ctx(instantiate_class(m, c), "instantiate class")?;
        let bn = ctx(build_flat_bn(m, &gm), "flatten class")?;
        let leaves: Vec<VarId> = (0..bn.len()).filter(|&v| bn.vars[v].is_boundary()).collect();
        let outs = ctx(m.class(c), "class")?
            .outputs()
            .map(|o| bn.index(&format!("{c}.{}", o.label)).ok_or(format!("no output {}", o.label)))
            .collect::<Result<Vec<_>, _>>()?;
        Ok((bn, leaves, outs))
    };
    let (bn1, l1, o1) = side(m, class)?;
    let (bn2, l2, o2) = side(m2, icon)?;
    let tail = |bn: &FlatBN, v: VarId| bn.vars[v].id.split_once('.').unwrap().1.to_string();
    let names1: BTreeSet<String> = l1.iter().map(|&v| tail(&bn1, v)).collect();
    let names2: BTreeSet<String> = l2.iter().map(|&v| tail(&bn2, v)).collect();
    ensure!(names1 == names2, "{class}: leaves {names1:?} vs {names2:?}");
    let l2: Vec<VarId> = l1.iter().map(|&v| bn2.index(&format!("{icon}.{}", tail(&bn1, v))).unwrap()).collect();
    let cards: Vec<usize> = l1.iter().map(|&v| bn1.vars[v].card()).collect();
    let rows: usize = cards.iter().product();
    let mut idx = vec![0usize; cards.len()];
    let mut worst = 0.0f64;
    for _ in 0..rows {
        let e1: Vec<(VarId, usize)> = l1.iter().copied().zip(idx.iter().copied()).collect();
        let e2: Vec<(VarId, usize)> = l2.iter().copied().zip(idx.iter().copied()).collect();
        let a = ve_posterior(&bn1, &e1, &o1).ok_or("impossible leaf row")?;
        let b = ve_posterior(&bn2, &e2, &o2).ok_or("impossible leaf row")?;
        worst = worst.max(max_diff(&a, &b));
        for k in (0..idx.len()).rev() {
            idx[k] += 1;
            if idx[k] < cards[k] {
                break;
            }
            idx[k] = 0;
        }
    }
    Ok(worst)
}

fn iconization_fidelity() -> Outcome {
    let mut worst = 0.0f64;
    let mut random_classes = 0;
    let mut seed = 0u64;
    while random_classes < 50 {
        ensure!(seed < 2000, "only {random_classes} iconizable random classes found");
        let m = ctx(load(&corpus::random_model(seed, RandomSpec::default())), "load")?;
        seed += 1;
        for name in m.classes.keys().filter(|c| **c != m.situation.name).cloned().collect::<Vec<_>>() {
            if random_classes == 50 || m.class(&name).unwrap().outputs().next().is_none() {
                continue;
            }
            let icon = match iconize_class(&m, &name, "ICONIZED") {
                Ok(c) => c,
                Err(e) if e.has_code(ErrorCode::IncompatibleClass) => continue,
                Err(e) => return Err(format!("seed {seed} {name}: {e}")),
            };
            let m2 = ctx(m.with_class(icon, Some(&name)), "register")?;
            worst = worst.max(iconized_gap(&m, &name, &m2, "ICONIZED")?);
            random_classes += 1;
        }
    }
    let acc = corpus::accident();
    for name in ["ENGINE", "CAR"] {
        let icon = ctx(iconize_class(&acc, name, "ICONIZED"), name)?;
        let m2 = ctx(acc.with_class(icon, Some(name)), "register")?;
        worst = worst.max(iconized_gap(&acc, name, &m2, "ICONIZED")?);
    }

    // Situation-level queries with the car iconized.
    let mut full = ctx(Session::new(acc.clone(), SessionOptions::default()), "session")?;
    let mut icon = full.clone();
    ctx(icon.apply_refinement(&RefinementOp { kind: RefineKind::Iconize, path: "Car".into(), class: None }), "iconize")?;
    let outside: Vec<String> = icon
        .bn()
        .vars
        .iter()
        .map(|v| v.id.clone())
        .filter(|id| full.bn().index(id).is_some())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut sets: Vec<Vec<(String, String)>> =
        vec![vec![("Driver.Age".into(), "0-20yr".into()), ("Road.Location".into(), "rural".into())], vec![]];
    for _ in 0..20 {
        let k = rng.gen_range(1..=3);
        sets.push(
            outside
                .choose_multiple(&mut rng, k)
                .map(|id| {
                    let v = &icon.bn().vars[icon.bn().index(id).unwrap()];
                    (id.clone(), v.domain.values[rng.gen_range(0..v.card())].clone())
                })
                .collect(),
        );
    }
    let mut session_worst = 0.0f64;
    let mut n = 0;
    for ev in &sets {
        for id in outside.iter().filter(|id| !ev.iter().any(|(p, _)| p == *id)) {
            let a = full.query(std::slice::from_ref(id), ev);
            let b = icon.query(std::slice::from_ref(id), ev);
            match (a, b) {
                (Ok(a), Ok(b)) => {
                    session_worst = session_worst.max(max_diff(&a.probs, &b.probs));
                    n += 1;
                }
                (Err(a), Err(b)) if a.has_code(ErrorCode::ZeroProb) && b.has_code(ErrorCode::ZeroProb) => break,
                (a, b) => return Err(format!("{id} under {ev:?}: {:?} vs {:?}", a.err(), b.err())),
            }
        }
    }
    ensure!(worst < ICON_TOL, "class conditional deviation {worst:e}");
    ensure!(session_worst < ICON_TOL, "situation query deviation {session_worst:e}");
    Ok(format!(
        "50 random classes + ENGINE + CAR max |diff| {worst:.1e}; {n} accident queries with iconized car max |diff| {session_worst:.1e}"
    ))
}

fn scratch_posteriors(s: &Session) -> Result<BTreeMap<String, Vec<f64>>, String> {
    let gm = ctx(instantiate_with(s.model(), s.overrides()), "instantiate")?;
    let bn = ctx(build_flat_bn(s.model(), &gm), "flatten")?;
    let ev: Vec<(VarId, usize)> = s
        .evidence()
        .iter()
        .map(|(id, val)| {
            let v = bn.index(id).unwrap();
            (v, bn.vars[v].domain.index_of(val).unwrap())
        })
        .collect();
    let mut out = BTreeMap::new();
    for v in (0..bn.len()).filter(|v| !ev.iter().any(|e| e.0 == *v)) {
        out.insert(bn.vars[v].id.clone(), ve_posterior(&bn, &ev, &[v]).ok_or("impossible evidence")?);
    }
    Ok(out)
}

fn refinement_locality() -> Outcome {
    let src = corpus::subclass_source();
    let mut s = ctx(Session::from_source(&src, SessionOptions::default()), "session")?;
    ctx(s.assert_evidence("Driver.Age", "0-20yr"), "evidence")?;
    ctx(s.apply_refinement(&RefinementOp { kind: RefineKind::Iconize, path: "Car".into(), class: None }), "iconize")?;
    let sub = ctx(
        s.apply_refinement(&RefinementOp { kind: RefineKind::Substitute, path: "Car".into(), class: Some("SPORTS-CAR".into()) }),
        "substitute",
    )?;
    ensure!(sub.rebuilt_inside == 0, "substitute rebuilt {} interior subnets", sub.rebuilt_inside);
    let de = ctx(s.apply_refinement(&RefinementOp { kind: RefineKind::Deiconize, path: "Car".into(), class: None }), "deiconize")?;
    let in_car = |p: &String| p == "Situation.Car" || p.starts_with("Situation.Car.");
    ensure!(de.rebuilt.iter().all(in_car), "deiconize rebuilt {:?}", de.rebuilt);
    ensure!(de.subnets_recalibrated.iter().all(in_car), "deiconize recalibrated {:?}", de.subnets_recalibrated);

    let mut worst = 0.0f64;
    let (mut applied, mut rejected) = (0, 0);
    let kinds = [RefineKind::Iconize, RefineKind::Deiconize, RefineKind::Substitute];
    for seq in 0..30u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seq);
        let engine = if seq % 3 == 0 { oobn::session::EngineKind::Flat } else { oobn::session::EngineKind::Msbn };
        let mut s = ctx(Session::from_source(&src, SessionOptions { engine, caching: seq % 2 == 0 }), "session")?;
        if rng.gen_bool(0.5) {
            ctx(s.assert_evidence("Time-of-Day", "night"), "evidence")?;
        }
        for _ in 0..5 {
            let paths: Vec<String> =
                s.ground().complex_ids().skip(1).map(|id| s.ground().obj(id).path.clone()).collect();
            let path = paths.choose(&mut rng).unwrap().clone();
            let kind = *kinds.choose(&mut rng).unwrap();
            let class = match kind {
                RefineKind::Substitute => match s.compatible_classes(&path) {
                    Ok(c) if !c.is_empty() => Some(c.choose(&mut rng).unwrap().clone()),
                    _ => None,
                },
                _ => None,
            };
            if kind == RefineKind::Substitute && class.is_none() {
                continue;
            }
            match s.apply_refinement(&RefinementOp { kind, path: path.clone(), class }) {
                Ok(_) => applied += 1,
                Err(e) if e.has_code(ErrorCode::IncompatibleClass) || e.has_code(ErrorCode::EvidenceOrphaned) => {
                    rejected += 1;
                    continue;
                }
                Err(e) => return Err(format!("seq {seq} {kind:?} {path}: {e}")),
            }
            let truth = scratch_posteriors(&s)?;
            for (id, p) in &truth {
                let got = ctx(s.query(std::slice::from_ref(id), &[]), "query")?;
                worst = worst.max(max_diff(p, &got.probs));
            }
        }
    }
    ensure!(worst < REFINE_TOL, "posterior after refinement deviates by {worst:e}");
    Ok(format!(
        "substitute rebuilt_inside=0, deiconize confined to car ({} rebuilt); {applied} random refinements ({rejected} rejected) max |diff| {worst:.1e}",
        de.rebuilt.len()
    ))
}

fn type_system() -> Outcome {
    let m = ctx(load(&corpus::subclass_source()), "load")?;
    let expect = [
        ("COMMUTE-ROAD", "ROAD", true),
        ("SPORTS-CAR", "CAR", true),
        ("RICH-PERSON", "PERSON", true),
        ("FUEL-INJECTED-ENGINE", "ENGINE", true),
        ("DRIVER", "PERSON", true),
        ("ROAD", "COMMUTE-ROAD", false),
        ("CAR", "SPORTS-CAR", false),
        ("PERSON", "RICH-PERSON", false),
        ("PERSON", "DRIVER", false),
        ("ENGINE", "FUEL-INJECTED-ENGINE", true),
        ("CAR", "ROAD", false),
    ];
    for (sub, sup, want) in expect {
        let got = check_subclass(m.class(sub).unwrap(), m.class(sup).unwrap(), &m.env.maps).is_ok();
        ensure!(got == want, "{sub} <= {sup}: got {got}, expected {want}");
    }
    for (sub, sup, _) in &expect[..5] {
        ensure!(m.is_a(sub, sup), "{sub} is not registered under {sup}");
    }

    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut pairs = 0usize;
    for l in 0..1000 {
        let src = random_lattice(&mut rng);
        let ms = ctx(parse_model(&src), "parse lattice")?;
        let env = TypeEnv::from_source(&ms).map_err(|e| format!("lattice {l}: {e}\n{src}"))?;
        let names: Vec<&String> = env.basics.keys().chain(env.structs.keys()).collect();
        let types: Vec<_> = names.iter().map(|n| env.lookup(n).unwrap()).collect();
        let rel: Vec<Vec<bool>> = types.iter().map(|a| types.iter().map(|b| env.is_subtype(a, b)).collect()).collect();
        for i in 0..types.len() {
            ensure!(rel[i][i], "lattice {l}: {} not reflexive", names[i]);
            for j in 0..types.len() {
                if !rel[i][j] {
                    continue;
                }
                pairs += 1;
                for k in 0..types.len() {
                    ensure!(!rel[j][k] || rel[i][k], "lattice {l}: {} <= {} <= {} breaks transitivity", names[i], names[j], names[k]);
                }
            }
        }
    }
    Ok(format!("{} class verdicts as expected; 1000 random lattices reflexive and transitive ({pairs} related pairs)", expect.len()))
}

fn fig2_golden() -> Outcome {
    let want: Value = ctx(serde_json::from_str(corpus::ACCIDENT_EXPECT), "sidecar")?;
    let s = ctx(Session::new(corpus::accident(), SessionOptions::default()), "session")?;
    let got = s.structure_json();
    let ht = &got["hypertree"];
    for sn in ht["subnets"].as_array().unwrap() {
        let p = sn["path"].as_str().unwrap();
        let w = &want["subnets"][p];
        ensure!(!w.is_null(), "unexpected subnet {p}");
        for k in ["local", "imported", "exported"] {
            ensure!(sn[k] == w[k], "{p}.{k}: {} vs {}", sn[k], w[k]);
        }
    }
    ensure!(
        ht["subnets"].as_array().unwrap().len() == want["subnets"].as_object().unwrap().len(),
        "subnet count differs"
    );
    ensure!(ht["links"] == want["links"], "links {} vs {}", ht["links"], want["links"]);
    let links: Vec<(String, String)> = ht["links"]
        .as_array()
        .unwrap()
        .iter()
        .map(|l| (l[0].as_str().unwrap().to_string(), l[1].as_str().unwrap().to_string()))
        .collect();
    let adjacent = |a: &str, b: &str| links.iter().any(|(x, y)| (x == a && y == b) || (x == b && y == a));
    ensure!(!adjacent("Situation.Weather", "Situation.Road"), "Weather and Road are adjacent");
    ensure!(adjacent("Situation", "Situation.Weather") && adjacent("Situation", "Situation.Road"), "missing situation links");
    let subnet = |p: &str| ht["subnets"].as_array().unwrap().iter().find(|s| s["path"] == p).unwrap().clone();
    let wet = Value::from("Situation.Weather.Wetness");
    let has = |s: &Value, k: &str| s[k].as_array().unwrap().contains(&wet);
    ensure!(has(&subnet("Situation"), "variables"), "Wetness not in the situation subnet");
    ensure!(has(&subnet("Situation.Weather"), "dsepset") && has(&subnet("Situation.Road"), "dsepset"), "Wetness not on both links");
    let top = links.iter().filter(|(p, _)| p == "Situation").count();
    Ok(format!("{} subnets and {} links match; situation has {top} children; Weather-Road routed via situation", links.len() + 1, links.len()))
}

fn fuzz() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let seeds: Vec<String> = (0..40).map(|s| corpus::random_model(s, RandomSpec::default())).collect();
    let alphabet: Vec<char> = "abcXYZ019 .,;:{}()<>=-+_$#/\n\t\"'\\!?*^&|@~`[]éλ\u{0}".chars().collect();
    let words = ["type", "map", "class", "extends", "situation", "input", "output", "private", "given", "default", "edge", "<-", "->", "=>"];
    let mut panics = Vec::new();
    let (mut ok, mut typed) = (0usize, 0usize);
    let mut check = |r: Result<(), oobn::Error>| -> Result<(), String> {
        match r {
            Ok(()) => ok += 1,
            Err(e) => {
                let d = e.diagnostics();
                ensure!(!d.is_empty() && d.iter().all(|d| d.code.as_str().starts_with("E_")), "untyped failure {e:?}");
                typed += 1;
            }
        }
        Ok(())
    };
    let pipeline = |src: &str, deep: bool| -> Result<(), oobn::Error> {
        let m = compile(&parse_model(src)?)?;
        let gm = instantiate(&m)?;
        let bn = build_flat_bn(&m, &gm)?;
        if deep && bn.len() <= 40 {
            let mut s = Session::new(m, SessionOptions::default())?;
            let id = bn.vars[bn.len() - 1].id.clone();
            s.query(&[id], &[])?;
        }
        Ok(())
    };
    let mut session = ctx(Session::new(corpus::accident(), SessionOptions::default()), "session")?;
    let paths: Vec<String> = session.bn().vars.iter().map(|v| v.id.clone()).collect();
    let parser_inputs = FUZZ_INPUTS * 4 / 5;
    for i in 0..FUZZ_INPUTS {
        let input: String = if i >= parser_inputs {
            String::new()
        } else if i % 4 == 0 {
            let n = rng.gen_range(0..120);
            (0..n).map(|_| *alphabet.choose(&mut rng).unwrap()).collect()
        } else if i % 4 == 1 {
            let n = rng.gen_range(0..40);
            (0..n)
                .map(|_| if rng.gen_bool(0.5) { words.choose(&mut rng).unwrap().to_string() } else { alphabet.choose(&mut rng).unwrap().to_string() })
                .collect::<Vec<_>>()
                .join(" ")
        } else {
            let mut s: Vec<char> = seeds.choose(&mut rng).unwrap().chars().collect();
            for _ in 0..rng.gen_range(1..=4) {
                let at = rng.gen_range(0..s.len());
                match rng.gen_range(0..4) {
                    0 => {
                        s.remove(at);
                    }
                    1 => s.insert(at, *alphabet.choose(&mut rng).unwrap()),
                    2 => {
                        let end = (at + rng.gen_range(1..30)).min(s.len());
                        s.drain(at..end);
                    }
                    _ => {
                        let end = (at + rng.gen_range(1..30)).min(s.len());
                        let chunk: Vec<char> = s[at..end].to_vec();
                        let to = rng.gen_range(0..s.len());
                        s.splice(to..to, chunk);
                    }
                }
            }
            s.into_iter().collect()
        };
        let r = if i < parser_inputs {
            catch_unwind(AssertUnwindSafe(|| pipeline(&input, i % 10 == 2)))
        } else {
            // query and evidence paths on a live session
            let mut p = paths.choose(&mut rng).unwrap().clone();
            match rng.gen_range(0..5) {
                0 => p = p.replace("Situation.", ""),
                1 => p.push_str(&format!(".{}", alphabet.choose(&mut rng).unwrap())),
                2 => p = p.chars().filter(|_| rng.gen_bool(0.9)).collect(),
                3 => p = (0..rng.gen_range(0..12)).map(|_| *alphabet.choose(&mut rng).unwrap()).collect(),
                _ => {}
            }
            let val = ["0-20yr", "rural", "none", "true", "", "x", "50mph", "wet"].choose(&mut rng).unwrap().to_string();
            let ev = vec![(paths.choose(&mut rng).unwrap().clone(), val.clone())];
            catch_unwind(AssertUnwindSafe(|| -> Result<(), oobn::Error> {
                match i % 3 {
                    0 => session.query(&[p.clone()], &ev).map(|_| ()),
                    1 => {
                        session.assert_evidence(&p, &val)?;
                        session.retract_evidence(&p)
                    }
                    _ => session.retract_evidence(&p),
                }
            }))
        };
        match r {
            Ok(r) => check(r)?,
            Err(_) => panics.push(input.chars().take(80).collect::<String>()),
        }
    }
    ensure!(panics.is_empty(), "{} panics, first on {:?}", panics.len(), panics[0]);
    Ok(format!("{FUZZ_INPUTS} inputs: {ok} accepted, {typed} typed diagnostics, 0 panics"))
}

fn main() {
    std::panic::set_hook(Box::new(|_| {}));
    let criteria: Vec<(&str, fn() -> Outcome)> = vec![
        ("oracle-equivalence", oracle_equivalence),
        ("engine-cross-check", engine_cross_check),
        ("io-set-separation", dsep_structure),
        ("declaration-order-uniqueness", uniqueness),
        ("linear-scaling-and-class-cache", scaling),
        ("iconization-fidelity", iconization_fidelity),
        ("refinement-locality", refinement_locality),
        ("type-system", type_system),
        ("accident-hypertree-golden", fig2_golden),
        ("fuzz", fuzz),
    ];
    let only: Option<String> = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let mut failed = 0;
    for (name, f) in criteria {
        if only.as_ref().is_some_and(|o| !name.contains(o.as_str())) {
            continue;
        }
        let t = Instant::now();
        let r = catch_unwind(f).unwrap_or_else(|p| {
            Err(format!("panicked: {}", p.downcast_ref::<String>().cloned().or(p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default()))
        });
        let secs = t.elapsed().as_secs_f64();
        match r {
            Ok(msg) => println!("PASS {name} ({secs:.1}s): {msg}"),
            Err(msg) => {
                failed += 1;
                println!("FAIL {name} ({secs:.1}s): {msg}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}

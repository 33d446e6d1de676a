//! The bundled model corpus and model generators.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dsl::{parse_model, ModelSource};
use crate::error::Result;
use crate::model::{compile, Model};

pub const ACCIDENT_CLASSES: &str = include_str!("../corpus/accident-classes.oobn");
pub const ACCIDENT_SITUATION: &str = include_str!("../corpus/accident-situation.oobn");
pub const SUBCLASSES: &str = include_str!("../corpus/subclasses.oobn");
pub const REFINED_SITUATION: &str = include_str!("../corpus/refined-situation.oobn");
/// `ACCIDENT_CLASSES` followed by `ACCIDENT_SITUATION`.
pub const ACCIDENT: &str = include_str!("../corpus/accident.oobn");

/// Structural expectations shipped next to the sources.
pub const ACCIDENT_EXPECT: &str = include_str!("../corpus/accident.json");
pub const SUBCLASSES_EXPECT: &str = include_str!("../corpus/subclasses.json");

pub fn accident_source() -> String {
    ACCIDENT.to_string()
}

/// The accident model: driver, car, weather and road.
pub fn accident_model() -> ModelSource {
    parse_model(ACCIDENT).expect("bundled corpus parses")
}

pub fn accident() -> Model {
    compile(&accident_model()).expect("bundled corpus compiles")
}

/// Accident classes plus all refinements, under the original situation.
pub fn subclass_source() -> String {
    format!("{ACCIDENT_CLASSES}{SUBCLASSES}{ACCIDENT_SITUATION}")
}

/// Accident classes plus all refinements, under a situation that uses them.
pub fn refined_source() -> String {
    format!("{ACCIDENT_CLASSES}{SUBCLASSES}{REFINED_SITUATION}")
}

/// Models exercising the subclass declarations.
pub fn subclass_suite() -> Vec<ModelSource> {
    [subclass_source(), refined_source()]
        .iter()
        .map(|s| parse_model(s).expect("bundled corpus parses"))
        .collect()
}

/// Named corpus entries: `(name, source)`.
pub fn entries() -> Vec<(&'static str, String)> {
    vec![
        ("accident", accident_source()),
        ("accident+subclasses", subclass_source()),
        ("refined-accident", refined_source()),
    ]
}

pub fn load(src: &str) -> Result<Model> {
    compile(&parse_model(src)?)
}

/// A CPT row of `n` probabilities in thousandths: each at least 0.02,
/// none equal to 0.5, summing to exactly 1.
fn random_row(rng: &mut ChaCha8Rng, n: usize) -> Vec<String> {
    loop {
        let w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.15..1.0)).collect();
        let z: f64 = w.iter().sum();
        let mut t: Vec<i64> = w.iter().map(|x| (x / z * 1000.0).round() as i64).collect();
        let rest = 1000 - t[..n - 1].iter().sum::<i64>();
        t[n - 1] = rest;
        if t.iter().all(|&x| x >= 20 && x != 500) {
            return t.iter().map(|x| fmt_thousandths(*x)).collect();
        }
    }
}

fn fmt_thousandths(x: i64) -> String {
    format!("{}", x as f64 / 1000.0)
}

/// CPT block text for parameters with the given domains.
fn cpt_block(rng: &mut ChaCha8Rng, params: &[&[&str]], card: usize) -> String {
    if params.is_empty() {
        return format!(" {{ {} }}", random_row(rng, card).join(" "));
    }
    let mut out = String::from(" {\n");
    let mut idx = vec![0usize; params.len()];
    loop {
        let key: Vec<&str> = idx.iter().enumerate().map(|(k, &i)| params[k][i]).collect();
        out.push_str(&format!("        ({}): {};\n", key.join(", "), random_row(rng, card).join(" ")));
        let mut k = params.len();
        loop {
            if k == 0 {
                out.push_str("    }");
                return out;
            }
            k -= 1;
            idx[k] += 1;
            if idx[k] < params[k].len() {
                break;
            }
            idx[k] = 0;
        }
    }
}

const SPEEDS: &[&str] = &["50mph", "70mph", "90mph"];
const BOOLS: &[&str] = &["true", "false"];
const WETNESS: &[&str] = &["dry", "wet", "icy"];

/// Source text of [`generate_family`].
pub fn family_source(k: usize, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = String::from(ACCIDENT_CLASSES);
    s.push_str(&format!("\n// {k} cars sharing one driver and the weather.\nsituation Family {{\n"));
    s.push_str("    private Driver: DRIVER;\n");
    s.push_str(&format!("    private Wetness: WETNESS{}\n", cpt_block(&mut rng, &[], 3)));
    for i in 1..=k {
        s.push_str(&format!("    private Car{i}: CAR;\n    Car{i}.Owner <- Driver;\n"));
        let body = cpt_block(&mut rng, &[SPEEDS, BOOLS, WETNESS], 3);
        s.push_str(&format!(
            "    private Risk{i}: LEVELS given (max: SPEEDS, aggressive: Boolean, wet: WETNESS){body}\n"
        ));
        s.push_str(&format!(
            "    Risk{i}.max <- Car{i}.Max-Speed;\n    Risk{i}.aggressive <- Driver.Aggressive;\n    Risk{i}.wet <- Wetness;\n"
        ));
    }
    s.push_str("}\n");
    s
}

/// A situation with `k` identical `CAR` instances owned by one driver,
/// each feeding its own risk variable; CPTs of the situation-level
/// variables come from `seed`.
pub fn generate_family(k: usize, seed: u64) -> ModelSource {
    parse_model(&family_source(k, seed)).expect("generated family parses")
}

/// Limits for [`random_model`].
#[derive(Debug, Clone, Copy)]
pub struct RandomSpec {
    /// Upper bound on simple variables in the unrolled model.
    pub max_vars: usize,
    /// Deepest nesting of complex objects below the situation.
    pub max_depth: usize,
}

impl Default for RandomSpec {
    fn default() -> Self {
        RandomSpec { max_vars: 14, max_depth: 3 }
    }
}

struct ClassInfo {
    name: String,
    inputs: usize,
    outputs: Vec<String>,
    vars: usize,
    depth: usize,
}

struct RandomGen {
    rng: ChaCha8Rng,
    spec: RandomSpec,
    classes: Vec<ClassInfo>,
    text: Vec<String>,
}

const B: &[&str] = &["t", "f"];

impl RandomGen {
    /// Emits a class (or the situation) using at most `budget` simple variables per instance.
    fn class(&mut self, depth: usize, budget: usize, situation: bool) -> usize {
        let inputs = if situation { 0 } else { self.rng.gen_range(0..=2) };
        let mut sources: Vec<String> = (0..inputs).map(|i| format!("I{i}")).collect();
        let mut body = String::new();
        for i in 0..inputs {
            body.push_str(&format!("    input I{i}: B;\n"));
        }
        let mut used = 0;
        let mut simple_labels = Vec::new();
        let mut n_items = 0;
        let target = self.rng.gen_range(1..=budget.clamp(1, 6));
        while used < target && used < budget {
            let room = budget - used;
            let complex = depth < self.spec.max_depth && room >= 2 && self.rng.gen_bool(0.35);
            let label = format!("X{n_items}");
            n_items += 1;
            if complex {
                let reuse: Vec<usize> = (0..self.classes.len())
                    .filter(|&c| self.classes[c].depth == depth + 1 && self.classes[c].vars <= room && self.classes[c].inputs <= sources.len())
                    .collect();
                let c = if !reuse.is_empty() && self.rng.gen_bool(0.5) {
                    reuse[self.rng.gen_range(0..reuse.len())]
                } else {
                    let c = self.class(depth + 1, room.min(6), false);
                    if self.classes[c].inputs > sources.len() {
                        // Not enough to wire it; fall back to a simple attribute.
                        n_items -= 1;
                        continue;
                    }
                    c
                };
                let info = &self.classes[c];
                body.push_str(&format!("    private {label}: {};\n", info.name));
                for i in 0..info.inputs {
                    let s = &sources[self.rng.gen_range(0..sources.len())];
                    body.push_str(&format!("    {label}.I{i} <- {s};\n"));
                }
                used += info.vars;
                let outs: Vec<String> = info.outputs.iter().map(|o| format!("{label}.{o}")).collect();
                sources.extend(outs);
            } else {
                let k = self.rng.gen_range(0..=sources.len().min(2));
                let mut picks: Vec<String> = Vec::new();
                while picks.len() < k {
                    let s = sources[self.rng.gen_range(0..sources.len())].clone();
                    if !picks.contains(&s) {
                        picks.push(s);
                    }
                }
                let params: Vec<String> = (0..k).map(|j| format!("p{j}: B")).collect();
                let doms: Vec<&[&str]> = vec![B; k];
                let cpt = cpt_block(&mut self.rng, &doms, 2);
                let given = if k > 0 { format!(" given ({})", params.join(", ")) } else { String::new() };
                body.push_str(&format!("    private {label}: B{given}{cpt}\n"));
                for (j, s) in picks.iter().enumerate() {
                    body.push_str(&format!("    {label}.p{j} <- {s};\n"));
                }
                sources.push(label.clone());
                simple_labels.push(label);
                used += 1;
            }
        }
        if simple_labels.is_empty() {
            let label = format!("X{n_items}");
            body.push_str(&format!("    private {label}: B{}\n", cpt_block(&mut self.rng, &[], 2)));
            simple_labels.push(label);
            used += 1;
        }
        // Some simple attributes become outputs.
        let mut outputs = Vec::new();
        for l in &simple_labels {
            if !situation && (outputs.is_empty() || self.rng.gen_bool(0.4)) {
                outputs.push(l.clone());
                body = body.replace(&format!("    private {l}: "), &format!("    output {l}: "));
            }
        }
        let id = self.classes.len();
        let name = if situation { "Root".to_string() } else { format!("C{id}") };
        let head = if situation { format!("situation {name} {{\n") } else { format!("class {name} {{\n") };
        self.text.push(format!("{head}{body}}}\n"));
        self.classes.push(ClassInfo { name, inputs, outputs, vars: used, depth });
        id
    }
}

/// A random model over binary variables: at most `spec.max_vars` simple
/// variables after unrolling, complex objects nested at most
/// `spec.max_depth` deep, classes sometimes instantiated more than once.
pub fn random_model(seed: u64, spec: RandomSpec) -> String {
    let mut g = RandomGen { rng: ChaCha8Rng::seed_from_u64(seed), spec, classes: Vec::new(), text: Vec::new() };
    g.class(0, spec.max_vars, true);
    let mut out = String::from("type B = {t, f};\n");
    for t in &g.text {
        out.push_str(t);
    }
    out
}

/// The same model with classes, types and class members shuffled into
/// another valid declaration order.
pub fn reorder_declarations(src: &ModelSource, seed: u64) -> ModelSource {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = src.clone();
    out.types.shuffle(&mut rng);
    out.maps.shuffle(&mut rng);
    out.classes.shuffle(&mut rng);
    for c in out.classes.iter_mut().chain(std::iter::once(&mut out.situation)) {
        c.members.shuffle(&mut rng);
    }
    out
}

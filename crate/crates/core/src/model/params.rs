use std::cell::RefCell;

use indexmap::IndexMap;
use rand::Rng;

use super::ModelConfig;
use crate::error::{Error, Result};
use crate::rng::{domain, keyed_rng};
use crate::tensor::Tensor;

/// How a parameter is initialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    /// Uniform in `±sqrt(1/fan_in)`.
    Weight { fan_in: usize },
    Bias,
    /// Output projection of a residual branch: zero under [`InitMode::Standard`].
    ResidualOut { fan_in: usize },
    ResidualOutBias,
    LnGamma,
    LnBeta,
    PreluSlope,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InitMode {
    /// Residual branches start as exact identities.
    #[default]
    Standard,
    /// Every parameter is random and nonzero, so no gradient path is cut.
    RandomNonzero,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub kind: ParamKind,
}

impl ParamSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Named parameters in declaration order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    entries: IndexMap<String, Param>,
}

impl ParamStore {
    pub fn insert(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) -> Result<()> {
        let name = name.into();
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::shape("param", format!("{name}: {} values for shape {shape:?}", data.len())));
        }
        if self.entries.contains_key(&name) {
            return Err(Error::invalid(format!("duplicate parameter name {name}")));
        }
        self.entries.insert(name, Param { shape, data });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.entries.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|k| k.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_elements(&self) -> usize {
        self.entries.values().map(|p| p.data.len()).sum()
    }

    pub fn check_finite(&self) -> Result<()> {
        for (name, p) in &self.entries {
            if let Some(i) = p.data.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("parameter {name}[{i}]")));
            }
        }
        Ok(())
    }

    /// Fills every parameter of `specs` from the `(seed, name)`-keyed stream.
    pub fn init(specs: &[ParamSpec], seed: u64, mode: InitMode) -> Result<Self> {
        let mut store = ParamStore::default();
        for (idx, spec) in specs.iter().enumerate() {
            let mut rng = keyed_rng(seed, domain::INIT, idx as u64);
            let n = spec.numel();
            let random = mode == InitMode::RandomNonzero;
            let mut uniform = |bound: f64| -> Vec<f64> { (0..n).map(|_| rng.random_range(-bound..bound)).collect() };
            let data = match spec.kind {
                ParamKind::Weight { fan_in } => uniform((1.0 / fan_in as f64).sqrt()),
                ParamKind::ResidualOut { fan_in } if random => uniform((1.0 / fan_in as f64).sqrt()),
                ParamKind::Bias | ParamKind::ResidualOutBias | ParamKind::LnBeta if random => uniform(0.1),
                ParamKind::LnGamma if random => uniform(0.1).into_iter().map(|v| 1.0 + v).collect(),
                ParamKind::PreluSlope if random => uniform(0.05).into_iter().map(|v| 0.25 + v).collect(),
                ParamKind::LnGamma => vec![1.0; n],
                ParamKind::PreluSlope => vec![0.25; n],
                ParamKind::ResidualOut { .. } | ParamKind::Bias | ParamKind::ResidualOutBias | ParamKind::LnBeta => {
                    vec![0.0; n]
                }
            };
            store.insert(spec.name.clone(), spec.shape.clone(), data)?;
        }
        Ok(store)
    }
}

struct SpecBuilder(Vec<ParamSpec>);

impl SpecBuilder {
    fn add(&mut self, name: String, shape: &[usize], kind: ParamKind) {
        self.0.push(ParamSpec {
            name,
            shape: shape.to_vec(),
            kind,
        });
    }

    fn weight(&mut self, name: String, shape: &[usize], fan_in: usize) {
        self.add(name, shape, ParamKind::Weight { fan_in });
    }

    fn bias(&mut self, name: String, n: usize) {
        self.add(name, &[n], ParamKind::Bias);
    }

    fn layer_norm(&mut self, prefix: &str, shape: &[usize]) {
        self.add(format!("{prefix}.ln.g"), shape, ParamKind::LnGamma);
        self.add(format!("{prefix}.ln.b"), shape, ParamKind::LnBeta);
    }
}

/// Every parameter of the network, in declaration order.
pub fn param_specs(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let (h, d, f) = (cfg.h, cfg.d_attn, cfg.f);
    let (e, s) = (cfg.attn_bin_dim, cfg.fullband_dim);
    let mut b = SpecBuilder(Vec::new());

    b.weight("enc.w".into(), &[h, 2, cfg.k], 2 * cfg.k);
    b.bias("enc.b".into(), h);

    for i in 0..cfg.b_spk {
        let p = format!("spk.rel{i}");
        b.weight(format!("{p}.glu.w"), &[2 * h, h], h);
        b.bias(format!("{p}.glu.b"), 2 * h);
        for stage in ["e1", "e2", "d1"] {
            b.weight(format!("{p}.{stage}.w"), &[h, h, 3], 3 * h);
            b.bias(format!("{p}.{stage}.b"), h);
            b.add(format!("{p}.{stage}.a"), &[h], ParamKind::PreluSlope);
        }
        b.add(format!("{p}.out.w"), &[h, h, 3], ParamKind::ResidualOut { fan_in: 3 * h });
        b.add(format!("{p}.out.b"), &[h], ParamKind::ResidualOutBias);
    }
    b.weight("spk.tok.w".into(), &[d, h], h);
    b.bias("spk.tok.b".into(), d);
    b.weight("spk.cls.w".into(), &[cfg.n_s, h], h);
    b.bias("spk.cls.b".into(), cfg.n_s);

    for blk in 0..cfg.b {
        let p = format!("blk{blk}.attn");
        b.layer_norm(&p, &[f, h]);
        b.weight(format!("{p}.bin.w"), &[e, h], h);
        b.bias(format!("{p}.bin.b"), e);
        b.weight(format!("{p}.proj.w"), &[d, f * e], f * e);
        b.bias(format!("{p}.proj.b"), d);
        for branch in ["sa", "ca"] {
            for m in ["q", "k", "v"] {
                b.weight(format!("{p}.{branch}.{m}.w"), &[d, d], d);
                b.bias(format!("{p}.{branch}.{m}.b"), d);
            }
        }
        b.add(format!("{p}.spk.ln.g"), &[d], ParamKind::LnGamma);
        b.add(format!("{p}.spk.ln.b"), &[d], ParamKind::LnBeta);
        b.weight(format!("{p}.sa.out.w"), &[f * e, d], 2 * d);
        b.bias(format!("{p}.sa.out.b"), f * e);
        b.weight(format!("{p}.ca.out.w"), &[f * e, d], 2 * d);
        b.add(format!("{p}.unbin.w"), &[h, e], ParamKind::ResidualOut { fan_in: e });
        b.add(format!("{p}.unbin.b"), &[h], ParamKind::ResidualOutBias);

        let p = format!("blk{blk}.cross");
        let kc = cfg.cross_kernel;
        let cin_g = h / cfg.cross_groups;
        for (conv, last) in [("fc1", false), ("fc2", true)] {
            let q = format!("{p}.{conv}");
            b.layer_norm(&q, &[h]);
            if last {
                b.add(format!("{q}.w"), &[h, cin_g, kc], ParamKind::ResidualOut { fan_in: cin_g * kc });
                b.add(format!("{q}.b"), &[h], ParamKind::ResidualOutBias);
            } else {
                b.weight(format!("{q}.w"), &[h, cin_g, kc], cin_g * kc);
                b.bias(format!("{q}.b"), h);
            }
            b.add(format!("{q}.a"), &[h], ParamKind::PreluSlope);
        }
        b.weight(format!("{p}.fb.in.w"), &[s, h], h);
        b.add(format!("{p}.fb.in.b"), &[s, 1], ParamKind::Bias);
        b.weight(format!("{p}.fb.freq.w"), &[s, f, f], f);
        b.add(format!("{p}.fb.freq.b"), &[s, 1, f], ParamKind::Bias);
        b.weight(format!("{p}.fb.out.w"), &[h, s], s);
        b.add(format!("{p}.fb.out.b"), &[h, 1], ParamKind::Bias);

        let p = format!("blk{blk}.narrow");
        b.layer_norm(&p, &[h]);
        b.weight(format!("{p}.in.w"), &[2 * h, h], h);
        b.bias(format!("{p}.in.b"), 2 * h);
        b.weight(format!("{p}.dw.w"), &[2 * h, 1, cfg.nb_kernel], cfg.nb_kernel);
        b.bias(format!("{p}.dw.b"), 2 * h);
        b.add(format!("{p}.out.w"), &[h, 2 * h], ParamKind::ResidualOut { fan_in: 2 * h });
        b.add(format!("{p}.out.b"), &[h], ParamKind::ResidualOutBias);
    }

    b.weight("dec.w".into(), &[2, h], h);
    b.bias("dec.b".into(), 2);
    b.0
}

/// Parameters bound as graph leaves for one forward pass. Every lookup of a
/// name returns the same leaf, so weight sharing is visible as identity.
pub struct Binder {
    tensors: IndexMap<String, Tensor>,
    trace: RefCell<Option<Vec<String>>>,
}

impl Binder {
    pub fn new(store: &ParamStore, requires_grad: bool) -> Result<Self> {
        let tensors = store
            .iter()
            .map(|(n, p)| Ok((n.to_string(), Tensor::leaf(p.data.clone(), &p.shape, requires_grad)?)))
            .collect::<Result<_>>()?;
        Ok(Binder {
            tensors,
            trace: RefCell::new(None),
        })
    }

    pub fn from_tensors(names: &[String], tensors: &[Tensor]) -> Result<Self> {
        if names.len() != tensors.len() {
            return Err(Error::invalid(format!("{} names for {} tensors", names.len(), tensors.len())));
        }
        Ok(Binder {
            tensors: names.iter().cloned().zip(tensors.iter().cloned()).collect(),
            trace: RefCell::new(None),
        })
    }

    pub fn get(&self, name: &str) -> Result<Tensor> {
        if let Some(trace) = self.trace.borrow_mut().as_mut() {
            trace.push(name.to_string());
        }
        self.tensors
            .get(name)
            .cloned()
            .ok_or_else(|| Error::invalid(format!("missing parameter {name}")))
    }

    /// Starts recording the names looked up through [`Binder::get`].
    pub fn start_trace(&self) {
        *self.trace.borrow_mut() = Some(Vec::new());
    }

    pub fn take_trace(&self) -> Vec<String> {
        self.trace.borrow_mut().take().unwrap_or_default()
    }

    pub fn tensors(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Gradient of every bound parameter after a backward pass; parameters
    /// the loss does not reach get zeros.
    pub fn grads(&self) -> IndexMap<String, Vec<f64>> {
        self.tensors
            .iter()
            .map(|(n, t)| (n.clone(), t.grad().unwrap_or_else(|| vec![0.0; t.numel()])))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_unique_and_init_reproducible() {
        let cfg = ModelConfig::toy();
        let specs = param_specs(&cfg);
        let mut names: Vec<_> = specs.iter().map(|s| s.name.clone()).collect();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), specs.len());
        let a = ParamStore::init(&specs, 1, InitMode::Standard).unwrap();
        let b = ParamStore::init(&specs, 1, InitMode::Standard).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, ParamStore::init(&specs, 2, InitMode::Standard).unwrap());
        assert!(a.get("blk0.narrow.out.w").unwrap().data.iter().all(|&v| v == 0.0));
        let r = ParamStore::init(&specs, 1, InitMode::RandomNonzero).unwrap();
        assert!(r.iter().all(|(_, p)| p.data.iter().all(|&v| v != 0.0)));
    }

    #[test]
    fn weights_within_fan_in_bound() {
        let cfg = ModelConfig::toy();
        let specs = param_specs(&cfg);
        let store = ParamStore::init(&specs, 3, InitMode::Standard).unwrap();
        for s in &specs {
            if let ParamKind::Weight { fan_in } = s.kind {
                let bound = (1.0 / fan_in as f64).sqrt();
                assert!(store.get(&s.name).unwrap().data.iter().all(|v| v.abs() <= bound));
            }
        }
    }

    #[test]
    fn binder_returns_same_leaf() {
        let mut store = ParamStore::default();
        store.insert("w", vec![2], vec![1.0, 2.0]).unwrap();
        assert!(store.insert("w", vec![1], vec![0.0]).is_err());
        let b = Binder::new(&store, true).unwrap();
        b.start_trace();
        assert!(b.get("w").unwrap().ptr_eq(&b.get("w").unwrap()));
        assert_eq!(b.take_trace(), vec!["w", "w"]);
        assert!(b.get("nope").is_err());
    }
}

//! Binary pruning masks over a network's prunable parameters.
//!
//! A [`PruneMask`] has one bit per prunable scalar, in the order given by the
//! [`PrunableSet`]; bit 1 keeps the parameter, bit 0 prunes it. Children are
//! `parent ∘ mask`, and the expanded mask ([`PruneMask::keep_flags`]) is
//! handed to the optimizers so pruned entries stay exactly zero.
//!
//! Anti-random masks are built two ways: complements (`M' = 1 - M`, the most
//! distant mask under Cartesian distance) and N-way partitions where every
//! prunable parameter is kept by exactly one child.

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::seq::SliceRandom;

use crate::bitset::BitSet;
use crate::error::{Error, Result};
use crate::nn::{NetworkGraph, ParamLayout, ParamRole};
use crate::seed;
use crate::tensor::Real;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum Scope {
    #[default]
    Global,
    Layerwise,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum Granularity {
    #[default]
    Connection,
    /// Whole units: a conv filter or a dense row, together with its bias.
    Neuron,
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scope::Global => "global",
            Scope::Layerwise => "layerwise",
        })
    }
}

impl FromStr for Scope {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "global" => Ok(Scope::Global),
            "layerwise" | "layer-wise" => Ok(Scope::Layerwise),
            _ => Err(Error::Config(format!("unknown pruning scope `{s}`"))),
        }
    }
}

impl fmt::Display for Granularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Granularity::Connection => "connection",
            Granularity::Neuron => "neuron",
        })
    }
}

impl FromStr for Granularity {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "connection" => Ok(Granularity::Connection),
            "neuron" => Ok(Granularity::Neuron),
            _ => Err(Error::Config(format!("unknown pruning granularity `{s}`"))),
        }
    }
}

/// One contiguous tensor inside the prunable set.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PrunableGroup {
    pub name: String,
    pub role: ParamRole,
    /// First global parameter index.
    pub offset: usize,
    /// First bit of this group inside the mask.
    pub start: usize,
    pub units: usize,
    pub unit_len: usize,
    /// Global offset of the bias belonging to these units (weights only).
    pub bias_offset: Option<usize>,
    pub is_output: bool,
}

impl PrunableGroup {
    pub fn len(&self) -> usize {
        self.units * self.unit_len
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn bits(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.len()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PrunableOptions {
    pub include_output_layer: bool,
    pub include_biases: bool,
}

/// Ordered global indices eligible for pruning.
///
/// Default: every conv and linear weight except the final (output) layer;
/// biases excluded.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PrunableSet {
    groups: Vec<PrunableGroup>,
    len: usize,
    total_params: usize,
}

impl PrunableSet {
    pub fn hidden_weights<T: Real>(net: &NetworkGraph<T>) -> Self {
        Self::new(net, PrunableOptions::default())
    }

    pub fn new<T: Real>(net: &NetworkGraph<T>, opts: PrunableOptions) -> Self {
        let layout: &ParamLayout = net.params().layout();
        let slots: Vec<(usize, usize)> = net.param_slots().iter().flatten().copied().collect();
        let mut groups = Vec::new();
        let mut start = 0;
        for (pos, &(wi, bi)) in slots.iter().enumerate() {
            let is_output = pos + 1 == slots.len();
            if is_output && !opts.include_output_layer {
                continue;
            }
            let w = layout.entry(wi);
            let b = layout.entry(bi);
            groups.push(PrunableGroup {
                name: w.name.clone(),
                role: ParamRole::Weight,
                offset: w.offset,
                start,
                units: w.units(),
                unit_len: w.unit_len(),
                bias_offset: Some(b.offset),
                is_output,
            });
            start += w.len();
            if opts.include_biases {
                groups.push(PrunableGroup {
                    name: b.name.clone(),
                    role: ParamRole::Bias,
                    offset: b.offset,
                    start,
                    units: b.len(),
                    unit_len: 1,
                    bias_offset: None,
                    is_output,
                });
                start += b.len();
            }
        }
        PrunableSet {
            groups,
            len: start,
            total_params: layout.total(),
        }
    }

    pub fn groups(&self) -> &[PrunableGroup] {
        &self.groups
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Number of parameters in the network this set was derived from.
    pub fn total_params(&self) -> usize {
        self.total_params
    }

    /// Global parameter index of every mask bit, in mask order.
    pub fn indices(&self) -> Vec<usize> {
        self.groups
            .iter()
            .flat_map(|g| g.offset..g.offset + g.len())
            .collect()
    }
}

/// Keep/prune bits over a [`PrunableSet`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PruneMask {
    bits: BitSet,
    scope: Scope,
    granularity: Granularity,
}

impl PruneMask {
    pub fn new(bits: BitSet, scope: Scope, granularity: Granularity) -> Self {
        PruneMask {
            bits,
            scope,
            granularity,
        }
    }

    pub fn all_ones(len: usize) -> Self {
        Self::new(BitSet::ones(len), Scope::Global, Granularity::Connection)
    }

    pub fn bits(&self) -> &BitSet {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn scope(&self) -> Scope {
        self.scope
    }

    pub fn granularity(&self) -> Granularity {
        self.granularity
    }

    pub fn kept(&self) -> usize {
        self.bits.count_ones()
    }

    /// Fraction of prunable bits that are zero.
    pub fn sparsity(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.bits.count_zeros() as f64 / self.len() as f64
    }

    pub fn density(&self) -> f64 {
        1.0 - self.sparsity()
    }

    fn check_against(&self, prunable: &PrunableSet) -> Result<()> {
        if self.len() != prunable.len() {
            return Err(Error::Structure(format!(
                "mask has {} bits but the prunable set has {}",
                self.len(),
                prunable.len()
            )));
        }
        Ok(())
    }

    /// Expands to one flag per network parameter: false where the parameter
    /// is pruned and must stay zero. Under neuron granularity a unit whose
    /// incoming weights are all pruned also loses its bias.
    pub fn keep_flags(&self, prunable: &PrunableSet) -> Result<BitSet> {
        self.check_against(prunable)?;
        let mut keep = BitSet::ones(prunable.total_params());
        for g in prunable.groups() {
            for bit in g.bits() {
                if !self.bits.get(bit) {
                    keep.set(g.offset + bit - g.start, false);
                }
            }
            if self.granularity == Granularity::Neuron && g.role == ParamRole::Weight {
                let bias = g.bias_offset.expect("weight groups record their bias");
                for u in 0..g.units {
                    let first = g.start + u * g.unit_len;
                    if (first..first + g.unit_len).all(|b| !self.bits.get(b)) {
                        keep.set(bias + u, false);
                    }
                }
            }
        }
        Ok(keep)
    }
}

fn check_sparsity(sparsity: f64) -> Result<()> {
    if !(0.0..1.0).contains(&sparsity) {
        return Err(Error::InvalidArgument(format!(
            "sparsity must lie in [0, 1), got {sparsity}"
        )));
    }
    Ok(())
}

/// Uniform random mask with an exact zero count: `⌊s·|P|⌋` globally, or
/// `⌊s·|layer|⌋` per layer. Neuron granularity removes `⌊s·units⌋` whole
/// units from every hidden layer.
pub fn random_mask(
    seed: u64,
    prunable: &PrunableSet,
    sparsity: f64,
    scope: Scope,
    granularity: Granularity,
) -> Result<PruneMask> {
    check_sparsity(sparsity)?;
    let mut rng = seed::rng(seed);
    let mut bits = BitSet::ones(prunable.len());
    match granularity {
        Granularity::Connection => match scope {
            Scope::Global => {
                let n = prunable.len();
                let k = (sparsity * n as f64).floor() as usize;
                for i in index::sample(&mut rng, n, k) {
                    bits.set(i, false);
                }
            }
            Scope::Layerwise => {
                for g in prunable.groups() {
                    let k = (sparsity * g.len() as f64).floor() as usize;
                    for i in index::sample(&mut rng, g.len(), k) {
                        bits.set(g.start + i, false);
                    }
                }
            }
        },
        Granularity::Neuron => {
            for g in prunable.groups().iter().filter(|g| g.role == ParamRole::Weight) {
                if g.is_output {
                    return Err(Error::InvalidArgument(
                        "neuron pruning cannot remove output units".into(),
                    ));
                }
                let k = (sparsity * g.units as f64).floor() as usize;
                if k >= g.units {
                    return Err(Error::InvalidArgument(format!(
                        "sparsity {sparsity} would remove every unit of {}",
                        g.name
                    )));
                }
                for u in index::sample(&mut rng, g.units, k) {
                    let first = g.start + u * g.unit_len;
                    for b in first..first + g.unit_len {
                        bits.set(b, false);
                    }
                    // A prunable bias of a removed unit goes with it.
                    if let Some(bias) = prunable.groups().iter().find(|b| {
                        b.role == ParamRole::Bias && Some(b.offset) == g.bias_offset
                    }) {
                        bits.set(bias.start + u, false);
                    }
                }
            }
        }
    }
    Ok(PruneMask::new(bits, scope, granularity))
}

/// Every bit flipped: `M' = 1 - M`.
pub fn complement(mask: &PruneMask) -> PruneMask {
    PruneMask::new(mask.bits.not(), mask.scope, mask.granularity)
}

/// `n` disjoint masks covering the prunable set, kept counts differing by at
/// most one. Bits are assigned by a seeded shuffle; the first `|P| mod n`
/// masks receive the extra bit.
pub fn partition(seed: u64, prunable: &PrunableSet, n: usize) -> Result<Vec<PruneMask>> {
    let len = prunable.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "partition needs at least 2 parts, got {n}"
        )));
    }
    if n > len {
        return Err(Error::InvalidArgument(format!(
            "cannot partition {len} prunable parameters into {n} parts"
        )));
    }
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut seed::rng(seed));
    let (base, extra) = (len / n, len % n);
    let mut masks = Vec::with_capacity(n);
    let mut cursor = 0;
    for i in 0..n {
        let take = base + usize::from(i < extra);
        let mut bits = BitSet::zeros(len);
        for &b in &order[cursor..cursor + take] {
            bits.set(b, true);
        }
        cursor += take;
        masks.push(PruneMask::new(bits, Scope::Global, Granularity::Connection));
    }
    Ok(masks)
}

/// `sqrt(Σ|a_i - b_i|)`, the square root of the Hamming distance.
pub fn cartesian_distance(a: &PruneMask, b: &PruneMask) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Structure(format!(
            "mask lengths differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    Ok((a.bits.hamming(&b.bits) as f64).sqrt())
}

/// Sum of Cartesian distances over all ordered pairs, `i == j` included.
pub fn total_distance(masks: &[PruneMask]) -> Result<f64> {
    if masks.is_empty() {
        return Err(Error::InvalidArgument("total distance of no masks".into()));
    }
    let mut total = 0.0;
    for a in masks {
        for b in masks {
            total += cartesian_distance(a, b)?;
        }
    }
    Ok(total)
}

/// Copy of `net` with pruned parameters set to zero and everything else
/// copied verbatim.
pub fn apply_mask<T: Real>(
    net: &NetworkGraph<T>,
    prunable: &PrunableSet,
    mask: &PruneMask,
) -> Result<NetworkGraph<T>> {
    if prunable.total_params() != net.param_count() {
        return Err(Error::Structure(format!(
            "prunable set describes {} parameters, network has {}",
            prunable.total_params(),
            net.param_count()
        )));
    }
    let keep = mask.keep_flags(prunable)?;
    let mut child = net.clone();
    zero_pruned(child.params_mut().values_mut(), &keep);
    Ok(child)
}

/// Zeroes every value whose keep flag is clear.
pub fn zero_pruned<T: Real>(values: &mut [T], keep: &BitSet) {
    for (i, v) in values.iter_mut().enumerate() {
        if !keep.get(i) {
            *v = T::zero();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{build_lenet, LeNetVariant};

    fn flat_set(n: usize) -> (NetworkGraph<f32>, PrunableSet) {
        // One hidden linear layer with n weights, plus an output layer.
        let net = NetworkGraph::<f32>::from_arch_descriptor(&format!(
            "{n}|linear({n},1)|relu|linear(1,2)"
        ))
        .unwrap();
        let set = PrunableSet::hidden_weights(&net);
        assert_eq!(set.len(), n);
        (net, set)
    }

    fn mask(s: &str) -> PruneMask {
        PruneMask::new(
            BitSet::from_bools(s.chars().map(|c| c == '1')),
            Scope::Global,
            Granularity::Connection,
        )
    }

    #[test]
    fn default_prunable_set_is_hidden_weights() {
        let net = build_lenet::<f32>(LeNetVariant::S, 10).unwrap();
        let set = PrunableSet::hidden_weights(&net);
        let names: Vec<&str> = set.groups().iter().map(|g| g.name.as_str()).collect();
        assert_eq!(names, ["conv1.weight", "conv2.weight", "fc1.weight", "fc2.weight"]);
        assert_eq!(set.len(), 1200 + 12800 + 204_800 + 32_768);
        let wide = PrunableSet::new(
            &net,
            PrunableOptions {
                include_output_layer: true,
                include_biases: true,
            },
        );
        assert_eq!(wide.len(), net.param_count());
    }

    #[test]
    fn random_mask_counts() {
        let (_, set) = flat_set(10);
        let m0 = random_mask(1, &set, 0.0, Scope::Global, Granularity::Connection).unwrap();
        assert_eq!(m0.kept(), 10);
        let m = random_mask(1, &set, 0.5, Scope::Global, Granularity::Connection).unwrap();
        assert_eq!(m.bits().count_zeros(), 5);
        assert_eq!(m.sparsity(), 0.5);
        assert_eq!(
            m,
            random_mask(1, &set, 0.5, Scope::Global, Granularity::Connection).unwrap()
        );
        assert!(random_mask(1, &set, 1.0, Scope::Global, Granularity::Connection).is_err());
        assert!(random_mask(1, &set, -0.1, Scope::Global, Granularity::Connection).is_err());
    }

    #[test]
    fn layerwise_quota_per_layer() {
        let net = build_lenet::<f32>(LeNetVariant::S, 10).unwrap();
        let set = PrunableSet::hidden_weights(&net);
        let m = random_mask(9, &set, 0.3, Scope::Layerwise, Granularity::Connection).unwrap();
        for g in set.groups() {
            let zeros = g.bits().filter(|&b| !m.bits().get(b)).count();
            assert_eq!(zeros, (0.3 * g.len() as f64).floor() as usize, "{}", g.name);
        }
    }

    #[test]
    fn neuron_masks_remove_whole_units() {
        let net = build_lenet::<f32>(LeNetVariant::S, 10).unwrap();
        let set = PrunableSet::hidden_weights(&net);
        let m = random_mask(5, &set, 0.25, Scope::Layerwise, Granularity::Neuron).unwrap();
        let keep = m.keep_flags(&set).unwrap();
        for g in set.groups() {
            let mut pruned = 0;
            for u in 0..g.units {
                let first = g.start + u * g.unit_len;
                let states: Vec<bool> = (first..first + g.unit_len).map(|b| m.bits().get(b)).collect();
                assert!(states.iter().all(|&s| s == states[0]), "partial unit in {}", g.name);
                if !states[0] {
                    pruned += 1;
                    assert!(!keep.get(g.bias_offset.unwrap() + u));
                } else {
                    assert!(keep.get(g.bias_offset.unwrap() + u));
                }
            }
            assert_eq!(pruned, (0.25 * g.units as f64).floor() as usize);
        }
        assert!(random_mask(5, &set, 1.0, Scope::Layerwise, Granularity::Neuron).is_err());
    }

    #[test]
    fn complement_examples() {
        assert_eq!(complement(&mask("1111")), mask("0000"));
        assert_eq!(complement(&mask("1010")), mask("0101"));
        let (_, set) = flat_set(64);
        let m = random_mask(3, &set, 0.5, Scope::Global, Granularity::Connection).unwrap();
        let c = complement(&m);
        assert_eq!(c.sparsity(), 0.5);
        assert_eq!(complement(&c), m);
        assert_eq!(cartesian_distance(&m, &c).unwrap(), 8.0);
    }

    #[test]
    fn partition_examples() {
        let (_, set) = flat_set(8);
        let parts = partition(2, &set, 4).unwrap();
        assert!(parts.iter().all(|m| m.kept() == 2));
        let (_, set) = flat_set(10);
        let parts = partition(2, &set, 3).unwrap();
        let kept: Vec<usize> = parts.iter().map(|m| m.kept()).collect();
        assert_eq!(kept, [4, 3, 3]);
        let union = parts.iter().fold(BitSet::zeros(10), |acc, m| acc.or(m.bits()));
        assert_eq!(union.count_ones(), 10);
        for i in 0..3 {
            for j in i + 1..3 {
                assert_eq!(parts[i].bits().and(parts[j].bits()).count_ones(), 0);
            }
        }
        let pair = partition(7, &set, 2).unwrap();
        assert_eq!(pair[1], complement(&pair[0]));
        assert_eq!(pair[0].sparsity(), 0.5);
        assert!(partition(1, &set, 11).is_err());
        assert!(partition(1, &set, 1).is_err());
    }

    #[test]
    fn distances() {
        let m = mask("0110");
        assert_eq!(cartesian_distance(&m, &m).unwrap(), 0.0);
        assert_eq!(
            cartesian_distance(&mask("011"), &mask("110")).unwrap(),
            2f64.sqrt()
        );
        assert!(cartesian_distance(&mask("01"), &mask("011")).is_err());
        assert_eq!(total_distance(std::slice::from_ref(&m)).unwrap(), 0.0);
        assert_eq!(total_distance(&[m.clone(), complement(&m)]).unwrap(), 4.0);
        assert!(total_distance(&[]).is_err());
    }

    #[test]
    fn apply_mask_identity_and_zeroing() {
        let mut net = build_lenet::<f32>(LeNetVariant::S, 10).unwrap();
        net.init_he(4);
        net.params_mut().values_mut().iter_mut().for_each(|v| *v += 0.01);
        let set = PrunableSet::hidden_weights(&net);
        let same = apply_mask(&net, &set, &PruneMask::all_ones(set.len())).unwrap();
        assert_eq!(same.params().values(), net.params().values());

        let none = apply_mask(&net, &set, &complement(&PruneMask::all_ones(set.len()))).unwrap();
        let layout = net.params().layout();
        for e in layout.entries() {
            let child = &none.params().values()[e.range()];
            let parent = &net.params().values()[e.range()];
            if e.role == ParamRole::Weight && e.name != "fc3.weight" {
                assert!(child.iter().all(|&v| v == 0.0), "{}", e.name);
            } else {
                assert_eq!(child, parent, "{}", e.name);
            }
        }

        let bad = PruneMask::all_ones(set.len() - 1);
        assert!(matches!(apply_mask(&net, &set, &bad), Err(Error::Structure(_))));
    }
}

//! Outer BICM code: rate-1/2 feed-forward convolutional code, puncturing,
//! random interleaving and an exact log-MAP (BCJR) SISO decoder.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::mapping::{max_star, LLR_CAP};
use crate::rng::seeded;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    /// Zero tail of `memory` bits appended, decoder ends in state 0.
    Terminated,
    Truncated,
}

/// Keep-pattern over the two mother-code output streams, one column per
/// trellis step.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PuncturePattern {
    rows: [Vec<u8>; 2],
}

impl PuncturePattern {
    pub fn new(row0: Vec<u8>, row1: Vec<u8>) -> Result<Self> {
        if row0.is_empty() || row0.len() != row1.len() {
            return Err(Error::InvalidParameter(
                "puncture rows must be nonempty and of equal length".into(),
            ));
        }
        if row0.iter().chain(&row1).any(|&b| b > 1) || row0.iter().chain(&row1).all(|&b| b == 0) {
            return Err(Error::InvalidParameter(
                "puncture pattern must be binary and keep something".into(),
            ));
        }
        Ok(PuncturePattern { rows: [row0, row1] })
    }

    /// Period in trellis steps.
    pub fn period(&self) -> usize {
        self.rows[0].len()
    }

    /// Bits kept per period.
    pub fn kept(&self) -> usize {
        self.rows.iter().flatten().filter(|&&b| b == 1).count()
    }

    #[inline]
    fn keeps(&self, step: usize, stream: usize) -> bool {
        self.rows[stream][step % self.period()] == 1
    }
}

/// The convolutional codes used in the simulations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CodeRate {
    #[serde(rename = "1/2")]
    Half,
    #[serde(rename = "2/3")]
    TwoThirds,
    #[serde(rename = "5/6")]
    FiveSixths,
}

impl CodeRate {
    pub fn value(self) -> f64 {
        match self {
            CodeRate::Half => 0.5,
            CodeRate::TwoThirds => 2.0 / 3.0,
            CodeRate::FiveSixths => 5.0 / 6.0,
        }
    }

    pub fn pattern(self) -> Option<PuncturePattern> {
        match self {
            CodeRate::Half => None,
            CodeRate::TwoThirds => Some(PuncturePattern::new(vec![1, 1], vec![0, 1]).unwrap()),
            CodeRate::FiveSixths => Some(PuncturePattern::new(vec![1, 0, 0, 0, 1], vec![0, 1, 1, 1, 1]).unwrap()),
        }
    }
}

impl fmt::Display for CodeRate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CodeRate::Half => "1/2",
            CodeRate::TwoThirds => "2/3",
            CodeRate::FiveSixths => "5/6",
        })
    }
}

impl FromStr for CodeRate {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "1/2" => Ok(CodeRate::Half),
            "2/3" => Ok(CodeRate::TwoThirds),
            "5/6" => Ok(CodeRate::FiveSixths),
            other => Err(Error::Parse(format!("unsupported code rate '{other}'"))),
        }
    }
}

/// Rate-1/2 non-recursive non-systematic convolutional code.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeSpec {
    /// Generator polynomials, bit `memory` taps the current input.
    pub generators: [u32; 2],
    pub memory: usize,
    pub puncture: Option<PuncturePattern>,
    pub termination: Termination,
}

/// Parses an octal generator pair such as `"7,5"`.
pub fn parse_generators(s: &str) -> Result<[u32; 2]> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 2 {
        return Err(Error::Parse(format!("expected two octal generators, got '{s}'")));
    }
    let g0 = u32::from_str_radix(parts[0], 8).map_err(|e| Error::Parse(e.to_string()))?;
    let g1 = u32::from_str_radix(parts[1], 8).map_err(|e| Error::Parse(e.to_string()))?;
    Ok([g0, g1])
}

impl CodeSpec {
    pub fn new(generators: [u32; 2], puncture: Option<PuncturePattern>, termination: Termination) -> Result<Self> {
        if generators.contains(&0) {
            return Err(Error::InvalidParameter("generator polynomials must be nonzero".into()));
        }
        let memory = (32 - generators[0].max(generators[1]).leading_zeros() - 1) as usize;
        if memory == 0 || memory > 12 {
            return Err(Error::InvalidParameter(format!("unsupported memory {memory}")));
        }
        Ok(CodeSpec {
            generators,
            memory,
            puncture,
            termination,
        })
    }

    /// `[7,5]_8`, zero-terminated, punctured to `rate`.
    pub fn nrnsc_75(rate: CodeRate) -> Self {
        CodeSpec::new([0o7, 0o5], rate.pattern(), Termination::Terminated).unwrap()
    }

    pub fn states(&self) -> usize {
        1 << self.memory
    }

    pub fn tail(&self) -> usize {
        match self.termination {
            Termination::Terminated => self.memory,
            Termination::Truncated => 0,
        }
    }

    /// Next state and the two output bits for input `u` in `state`.
    #[inline]
    pub fn step(&self, state: usize, u: usize) -> (usize, [u8; 2]) {
        let reg = (u << self.memory) | state;
        let out = [
            ((reg as u32 & self.generators[0]).count_ones() & 1) as u8,
            ((reg as u32 & self.generators[1]).count_ones() & 1) as u8,
        ];
        (reg >> 1, out)
    }

    /// Number of channel bits produced for `steps` trellis steps.
    pub fn transmitted_bits(&self, steps: usize) -> usize {
        match &self.puncture {
            None => 2 * steps,
            Some(p) => (0..steps)
                .map(|t| p.keeps(t, 0) as usize + p.keeps(t, 1) as usize)
                .sum(),
        }
    }
}

/// How an information packet fills a block of `K·Q` channel bits.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockLayout {
    pub info_bits: usize,
    pub trellis_steps: usize,
    /// Coded bits after puncturing.
    pub coded_bits: usize,
    /// Unused channel bits at the end of the block (random filler).
    pub filler_bits: usize,
}

/// Largest packet whose punctured codeword fits in `channel_bits`, with the
/// trellis length a whole number of puncture periods.
pub fn block_layout(channel_bits: usize, spec: &CodeSpec) -> Result<BlockLayout> {
    let period = spec.puncture.as_ref().map_or(1, |p| p.period());
    let per_period = spec.transmitted_bits(period);
    let steps = channel_bits / per_period * period;
    if steps <= spec.tail() {
        return Err(Error::InvalidParameter(format!(
            "{channel_bits} channel bits cannot carry a codeword"
        )));
    }
    let coded = spec.transmitted_bits(steps);
    Ok(BlockLayout {
        info_bits: steps - spec.tail(),
        trellis_steps: steps,
        coded_bits: coded,
        filler_bits: channel_bits - coded,
    })
}

/// Mother-code output `c_{t,0} c_{t,1}` per step, tail included when terminated.
pub fn conv_encode(bits: &[u8], spec: &CodeSpec) -> Vec<u8> {
    let mut state = 0;
    let mut out = Vec::with_capacity(2 * (bits.len() + spec.tail()));
    for &u in bits.iter().chain(std::iter::repeat_n(&0u8, spec.tail())) {
        let (next, c) = spec.step(state, u as usize & 1);
        out.extend_from_slice(&c);
        state = next;
    }
    out
}

fn check_stream(len: usize, pattern: &PuncturePattern) -> Result<usize> {
    let unit = 2 * pattern.period();
    if !len.is_multiple_of(unit) {
        return Err(Error::LengthMismatch {
            expected: len / unit * unit,
            actual: len,
        });
    }
    Ok(len / 2)
}

pub fn puncture<T: Copy>(bits: &[T], pattern: &PuncturePattern) -> Result<Vec<T>> {
    check_stream(bits.len(), pattern)?;
    Ok(bits
        .iter()
        .enumerate()
        .filter(|(i, _)| pattern.keeps(i / 2, i % 2))
        .map(|(_, &b)| b)
        .collect())
}

/// Re-expands a punctured LLR stream to `steps` trellis steps with zero LLRs
/// in the punctured slots.
pub fn depuncture(llrs: &[f64], pattern: &PuncturePattern, steps: usize) -> Result<Vec<f64>> {
    let full = 2 * steps;
    check_stream(full, pattern)?;
    let expected = (0..full).filter(|i| pattern.keeps(i / 2, i % 2)).count();
    if llrs.len() != expected {
        return Err(Error::LengthMismatch {
            expected,
            actual: llrs.len(),
        });
    }
    let mut it = llrs.iter();
    Ok((0..full)
        .map(|i| {
            if pattern.keeps(i / 2, i % 2) {
                *it.next().unwrap()
            } else {
                0.0
            }
        })
        .collect())
}

/// Seeded uniform random permutation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interleaver {
    perm: Vec<usize>,
    seed: Option<u64>,
}

impl Interleaver {
    pub fn random(len: usize, seed: u64) -> Self {
        let mut perm: Vec<usize> = (0..len).collect();
        perm.shuffle(&mut seeded(seed));
        Interleaver { perm, seed: Some(seed) }
    }

    pub fn identity(len: usize) -> Self {
        Interleaver {
            perm: (0..len).collect(),
            seed: None,
        }
    }

    pub fn from_permutation(perm: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; perm.len()];
        for &p in &perm {
            if p >= perm.len() || std::mem::replace(&mut seen[p], true) {
                return Err(Error::InvalidParameter("not a permutation".into()));
            }
        }
        Ok(Interleaver { perm, seed: None })
    }

    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    /// `out[i] = seq[perm[i]]`.
    pub fn interleave<T: Copy>(&self, seq: &[T]) -> Result<Vec<T>> {
        self.check(seq.len())?;
        Ok(self.perm.iter().map(|&p| seq[p]).collect())
    }

    pub fn deinterleave<T: Copy + Default>(&self, seq: &[T]) -> Result<Vec<T>> {
        self.check(seq.len())?;
        let mut out = vec![T::default(); seq.len()];
        for (i, &p) in self.perm.iter().enumerate() {
            out[p] = seq[i];
        }
        Ok(out)
    }

    fn check(&self, len: usize) -> Result<()> {
        if len != self.perm.len() {
            return Err(Error::LengthMismatch {
                expected: self.perm.len(),
                actual: len,
            });
        }
        Ok(())
    }
}

/// Decoder outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct BcjrOutput {
    /// `L_dec(c) - L_in(c)` for every mother-code bit.
    pub extrinsic: Vec<f64>,
    /// A posteriori LLRs of the information bits (tail excluded).
    pub info_llrs: Vec<f64>,
    pub hard_bits: Vec<u8>,
}

/// Exact log-MAP decoding of the mother code from coded-bit LLRs
/// (depunctured, two per step; positive favours 0).
pub fn bcjr_decode(llrs: &[f64], spec: &CodeSpec) -> Result<BcjrOutput> {
    if !llrs.len().is_multiple_of(2) || llrs.len() / 2 <= spec.tail() {
        return Err(Error::InvalidParameter(format!(
            "bad coded stream length {}",
            llrs.len()
        )));
    }
    let steps = llrs.len() / 2;
    let ns = spec.states();
    let lin: Vec<f64> = llrs.iter().map(|l| l.clamp(-LLR_CAP, LLR_CAP)).collect();

    let mut trellis = Vec::with_capacity(2 * ns);
    for s in 0..ns {
        for u in 0..2 {
            let (next, c) = spec.step(s, u);
            trellis.push((s, u, next, c));
        }
    }
    let branch = |t: usize, c: [u8; 2]| -> f64 {
        let sgn = |b: u8| if b == 0 { 0.5 } else { -0.5 };
        sgn(c[0]) * lin[2 * t] + sgn(c[1]) * lin[2 * t + 1]
    };

    let ninf = f64::NEG_INFINITY;
    let mut alpha = vec![ninf; (steps + 1) * ns];
    alpha[0] = 0.0;
    for t in 0..steps {
        let (cur, nxt) = alpha.split_at_mut((t + 1) * ns);
        let cur = &cur[t * ns..];
        let nxt = &mut nxt[..ns];
        for &(s, _, n, c) in &trellis {
            if cur[s] > ninf {
                nxt[n] = max_star(nxt[n], cur[s] + branch(t, c));
            }
        }
        let m = nxt.iter().copied().fold(ninf, f64::max);
        nxt.iter_mut().for_each(|a| *a -= m);
    }

    let mut beta = vec![ninf; (steps + 1) * ns];
    match spec.termination {
        Termination::Terminated => beta[steps * ns] = 0.0,
        Termination::Truncated => beta[steps * ns..].iter_mut().for_each(|b| *b = 0.0),
    }
    for t in (0..steps).rev() {
        let (cur, nxt) = beta.split_at_mut((t + 1) * ns);
        let cur = &mut cur[t * ns..];
        let nxt = &nxt[..ns];
        for &(s, _, n, c) in &trellis {
            if nxt[n] > ninf {
                cur[s] = max_star(cur[s], nxt[n] + branch(t, c));
            }
        }
        let m = cur.iter().copied().fold(ninf, f64::max);
        cur.iter_mut().for_each(|b| *b -= m);
    }

    let info_len = steps - spec.tail();
    let mut extrinsic = vec![0.0; 2 * steps];
    let mut info_llrs = Vec::with_capacity(info_len);
    for t in 0..steps {
        // `coded` leaves out each bit's own channel term, so the extrinsic
        // survives when the posterior is far beyond the LLR cap.
        let mut coded = [[ninf; 2]; 2];
        let mut info = [ninf; 2];
        for &(s, u, n, c) in &trellis {
            let a = alpha[t * ns + s];
            let b = beta[(t + 1) * ns + n];
            if a == ninf || b == ninf {
                continue;
            }
            let m = a + branch(t, c) + b;
            info[u] = max_star(info[u], m);
            for r in 0..2 {
                let own = if c[r] == 0 { 0.5 } else { -0.5 } * lin[2 * t + r];
                coded[r][c[r] as usize] = max_star(coded[r][c[r] as usize], m - own);
            }
        }
        for r in 0..2 {
            let [l0, l1] = coded[r];
            extrinsic[2 * t + r] = match (l0 == ninf, l1 == ninf) {
                (false, false) => (l0 - l1).clamp(-LLR_CAP, LLR_CAP),
                (true, false) => -LLR_CAP,
                (false, true) => LLR_CAP,
                (true, true) => 0.0,
            };
        }
        if t < info_len {
            info_llrs.push((info[0] - info[1]).clamp(-LLR_CAP, LLR_CAP));
        }
    }
    let hard_bits = info_llrs.iter().map(|&l| (l < 0.0) as u8).collect();
    Ok(BcjrOutput {
        extrinsic,
        info_llrs,
        hard_bits,
    })
}

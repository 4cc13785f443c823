//! Exact law of the first-attempt round trip for light-tailed components.
//!
//! When both one-way delays are deterministic or uniform (any floor or
//! truncation included), each is a mixture of point masses and uniform
//! intervals, and their sum has a density that is piecewise linear plus a
//! finite set of atoms. That makes the truncated moments
//! `E[max{D^a, theta}^p]` closed-form, which the offline solver uses to reach
//! root-finding accuracy far below Monte Carlo noise. Heavier-tailed kinds
//! have no such mixture form and fall back to sampling.

use crate::channel::{DelayDistribution, DelayKind, TruncationMode};

/// A weighted piece of a one-dimensional mixture law.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Piece {
    Atom { x: f64 },
    Interval { lo: f64, hi: f64 },
}

/// Mixture of atoms and uniform intervals; weights sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentMix {
    pieces: Vec<(f64, Piece)>,
}

/// Mixture representation of a delay distribution, if it has one.
///
/// Deterministic and uniform kinds qualify; a clamp truncation adds an atom at
/// the cap, a resample truncation shortens the interval.
pub fn component_mix(d: &DelayDistribution) -> Option<ComponentMix> {
    let eps = d.epsilon_floor();
    let pieces = match d.kind() {
        DelayKind::Deterministic { value } => {
            let x = match d.truncation() {
                // Construction guarantees a resample cap is at or above the
                // point mass, so only a clamp can move it.
                Some((upper, TruncationMode::Clamp)) => value.min(upper - eps),
                _ => value,
            };
            vec![(1.0, Piece::Atom { x: eps + x })]
        }
        DelayKind::Uniform { lo, hi } => match d.truncation() {
            None => vec![(1.0, Piece::Interval { lo: eps + lo, hi: eps + hi })],
            Some((upper, mode)) => {
                let cap = upper - eps;
                let b = cap.min(hi);
                match mode {
                    TruncationMode::Resample => {
                        vec![(1.0, Piece::Interval { lo: eps + lo, hi: eps + b })]
                    }
                    TruncationMode::Clamp => {
                        let mut v = Vec::new();
                        if b > lo {
                            let mass = (b - lo) / (hi - lo);
                            v.push((mass, Piece::Interval { lo: eps + lo, hi: eps + b }));
                            if mass < 1.0 {
                                v.push((1.0 - mass, Piece::Atom { x: eps + cap }));
                            }
                        } else {
                            v.push((1.0, Piece::Atom { x: eps + cap }));
                        }
                        v
                    }
                }
            }
        },
        DelayKind::LogNormal { .. } | DelayKind::Exponential { .. } => return None,
    };
    Some(ComponentMix { pieces })
}

/// Density segment that is linear on `[lo, hi]`, carrying total mass
/// `(f_lo + f_hi) / 2 * (hi - lo)`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct LinSeg {
    lo: f64,
    hi: f64,
    f_lo: f64,
    f_hi: f64,
}

impl LinSeg {
    /// Integrates `x^p f(x)` over `[a, b]` intersected with the segment,
    /// for `p` in `{0, 1, 2}`.
    fn moment_on(&self, a: f64, b: f64, p: u32) -> f64 {
        let a = a.max(self.lo);
        let b = b.min(self.hi);
        if b <= a {
            return 0.0;
        }
        // f(x) = c0 + c1 x on the segment.
        let slope = (self.f_hi - self.f_lo) / (self.hi - self.lo);
        let c1 = slope;
        let c0 = self.f_lo - slope * self.lo;
        let int = |x: f64| -> f64 {
            match p {
                0 => c0 * x + c1 * x * x / 2.0,
                1 => c0 * x * x / 2.0 + c1 * x * x * x / 3.0,
                2 => c0 * x * x * x / 3.0 + c1 * x * x * x * x / 4.0,
                _ => unreachable!("only moments 0..=2 are needed"),
            }
        };
        int(b) - int(a)
    }
}

/// Law of a sum of two independent [`ComponentMix`] variables: finitely many
/// atoms plus a piecewise-linear density part. Segments may overlap; all
/// functionals are additive over the list.
#[derive(Debug, Clone, PartialEq)]
pub struct SumLaw {
    atoms: Vec<(f64, f64)>,
    segments: Vec<LinSeg>,
}

impl SumLaw {
    /// Convolves two component mixtures piece by piece.
    pub fn convolve(a: &ComponentMix, b: &ComponentMix) -> SumLaw {
        let mut atoms = Vec::new();
        let mut segments = Vec::new();
        for &(wa, pa) in &a.pieces {
            for &(wb, pb) in &b.pieces {
                let w = wa * wb;
                match (pa, pb) {
                    (Piece::Atom { x }, Piece::Atom { x: y }) => atoms.push((x + y, w)),
                    (Piece::Atom { x }, Piece::Interval { lo, hi })
                    | (Piece::Interval { lo, hi }, Piece::Atom { x }) => {
                        let f = w / (hi - lo);
                        segments.push(LinSeg { lo: x + lo, hi: x + hi, f_lo: f, f_hi: f });
                    }
                    (Piece::Interval { lo: a1, hi: b1 }, Piece::Interval { lo: a2, hi: b2 }) => {
                        // Trapezoidal density on [a1+a2, b1+b2] with plateau
                        // height 1/max(w1, w2).
                        let (w1, w2) = (b1 - a1, b2 - a2);
                        let (wmin, wmax) = (w1.min(w2), w1.max(w2));
                        let lo = a1 + a2;
                        let hi = b1 + b2;
                        let h = w / wmax;
                        segments.push(LinSeg { lo, hi: lo + wmin, f_lo: 0.0, f_hi: h });
                        if wmax > wmin {
                            segments.push(LinSeg {
                                lo: lo + wmin,
                                hi: lo + wmax,
                                f_lo: h,
                                f_hi: h,
                            });
                        }
                        segments.push(LinSeg { lo: lo + wmax, hi, f_lo: h, f_hi: 0.0 });
                    }
                }
            }
        }
        SumLaw { atoms, segments }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let from_atoms: f64 = self
            .atoms
            .iter()
            .filter(|&&(loc, _)| loc <= x)
            .map(|&(_, m)| m)
            .sum();
        let from_density: f64 = self
            .segments
            .iter()
            .map(|s| s.moment_on(f64::NEG_INFINITY, x, 0))
            .sum();
        from_atoms + from_density
    }

    pub fn mean(&self) -> f64 {
        self.raw_moment(1)
    }

    pub fn second_moment(&self) -> f64 {
        self.raw_moment(2)
    }

    fn raw_moment(&self, p: u32) -> f64 {
        let from_atoms: f64 = self.atoms.iter().map(|&(x, m)| m * x.powi(p as i32)).sum();
        let from_density: f64 = self
            .segments
            .iter()
            .map(|s| s.moment_on(f64::NEG_INFINITY, f64::INFINITY, p))
            .sum();
        from_atoms + from_density
    }

    /// `E[max{X, theta}^p]` for `p` in `{1, 2}`.
    pub fn max_moment(&self, theta: f64, p: u32) -> f64 {
        let tp = theta.powi(p as i32);
        let from_atoms: f64 = self
            .atoms
            .iter()
            .map(|&(x, m)| m * x.max(theta).powi(p as i32))
            .sum();
        let from_density: f64 = self
            .segments
            .iter()
            .map(|s| {
                tp * s.moment_on(f64::NEG_INFINITY, theta, 0)
                    + s.moment_on(theta, f64::INFINITY, p)
            })
            .sum();
        from_atoms + from_density
    }
}

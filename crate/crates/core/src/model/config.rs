use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};

/// How the two spectral branches of an operator block are wired.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// `sigma(SC_a(v) + SC_b(v) + W v + b)`.
    #[default]
    Parallel,
    /// `sigma(SC_b(sigma(SC_a(v) + W1 v)) + W2 v)`, two chained FNO-style layers.
    Serial,
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::Parallel => "parallel",
            Variant::Serial => "serial",
        })
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "parallel" => Ok(Variant::Parallel),
            "serial" => Ok(Variant::Serial),
            other => Err(Error::Config(format!(
                "unknown variant `{other}` (expected parallel or serial)"
            ))),
        }
    }
}

/// Architecture hyperparameters.
///
/// `modes_a` / `modes_b` list `[m1, m2]` per level (`levels + 1` entries,
/// the last one for the coarsest scale). When left empty they are derived
/// from `base_modes`: branch A halves per level with a floor of 4, branch B
/// takes half of branch A with a floor of 2.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DpnoConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    pub width: usize,
    pub levels: usize,
    pub blocks_per_level: usize,
    pub base_modes: [usize; 2],
    pub modes_a: Vec<[usize; 2]>,
    pub modes_b: Vec<[usize; 2]>,
    pub use_skip: bool,
    pub final_block_activation: bool,
    pub variant: Variant,
    pub seed: u64,
}

impl Default for DpnoConfig {
    fn default() -> Self {
        Self {
            in_channels: 1,
            out_channels: 1,
            width: 32,
            levels: 2,
            blocks_per_level: 2,
            base_modes: [16, 16],
            modes_a: Vec::new(),
            modes_b: Vec::new(),
            use_skip: true,
            final_block_activation: false,
            variant: Variant::Parallel,
            seed: 0,
        }
    }
}

impl DpnoConfig {
    pub fn new(in_channels: usize, out_channels: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            ..Self::default()
        }
    }

    /// Copy with explicit per-level mode lists, validated.
    pub fn resolved(&self) -> Result<Self> {
        let mut c = self.clone();
        if c.modes_a.is_empty() {
            c.modes_a = (0..=c.levels)
                .map(|l| c.base_modes.map(|m| (m >> l).max(m.min(4))))
                .collect();
        }
        if c.modes_b.is_empty() {
            c.modes_b = c
                .modes_a
                .iter()
                .map(|a| a.map(|m| (m / 2).max(2.min(m.saturating_sub(1)))))
                .collect();
        }
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.in_channels == 0 || self.out_channels == 0 {
            return bad("in_channels and out_channels must be positive".into());
        }
        if self.width < self.in_channels || self.width < self.out_channels {
            return bad(format!(
                "width {} must be at least in_channels {} and out_channels {}",
                self.width, self.in_channels, self.out_channels
            ));
        }
        if self.blocks_per_level == 0 {
            return bad("blocks_per_level must be at least 1".into());
        }
        for (name, list) in [("modes_a", &self.modes_a), ("modes_b", &self.modes_b)] {
            if list.len() != self.levels + 1 {
                return bad(format!(
                    "{name} has {} entries, levels = {} needs {}",
                    list.len(),
                    self.levels,
                    self.levels + 1
                ));
            }
            if list.iter().flatten().any(|&m| m == 0) {
                return bad(format!("{name} contains a zero mode count"));
            }
        }
        for (l, (a, b)) in self.modes_a.iter().zip(&self.modes_b).enumerate() {
            if b[0] >= a[0] || b[1] >= a[1] {
                return bad(format!(
                    "level {l}: modes_b {b:?} must be strictly below modes_a {a:?}"
                ));
            }
        }
        Ok(())
    }

    /// Checks that an `h x w` grid admits every level of a resolved config.
    pub fn check_grid(&self, h: usize, w: usize) -> Result<()> {
        let f = 1usize << self.levels;
        if h % f != 0 || w % f != 0 {
            return Err(shape_err!(
                "grid {h}x{w} is not divisible by 2^levels = {f}"
            ));
        }
        for l in 0..=self.levels {
            let (hl, wl) = (h >> l, w >> l);
            if l < self.levels && (hl < 3 || wl < 3) {
                return Err(shape_err!(
                    "level {l} grid {hl}x{wl} is too small to convolve"
                ));
            }
            for m in [self.modes_a[l], self.modes_b[l]] {
                if hl < 2 * m[0] || wl < 2 * m[1] {
                    return Err(shape_err!(
                        "level {l} grid {hl}x{wl} cannot hold modes {m:?} (needs {}x{})",
                        2 * m[0],
                        2 * m[1]
                    ));
                }
            }
        }
        Ok(())
    }

    /// Closed-form count of real scalars (complex weights count twice).
    pub fn param_count(&self) -> usize {
        let w = self.width;
        let pointwise = |i: usize, o: usize| i * o + o;
        let conv = w * w * 9 + w;
        let lift = pointwise(self.in_channels, w) + pointwise(w, w);
        let project = pointwise(w, 2 * w) + pointwise(2 * w, self.out_channels);
        let extra = match self.variant {
            Variant::Parallel => 0,
            Variant::Serial => pointwise(w, w),
        };
        let blocks: usize = self
            .modes_a
            .iter()
            .zip(&self.modes_b)
            .map(|(a, b)| {
                let spectral = 4 * w * w * (a[0] * a[1] + b[0] * b[1]);
                self.blocks_per_level * (spectral + pointwise(w, w) + extra)
            })
            .sum();
        lift + 2 * self.levels * conv + blocks + project
    }

    /// Flat `field = value` view used to report configuration differences.
    pub fn fields(&self) -> BTreeMap<String, String> {
        let fmt_modes = |m: &Vec<[usize; 2]>| {
            m.iter()
                .map(|[a, b]| format!("{a}x{b}"))
                .collect::<Vec<_>>()
                .join(",")
        };
        [
            ("in_channels", self.in_channels.to_string()),
            ("out_channels", self.out_channels.to_string()),
            ("width", self.width.to_string()),
            ("levels", self.levels.to_string()),
            ("blocks_per_level", self.blocks_per_level.to_string()),
            (
                "base_modes",
                format!("{}x{}", self.base_modes[0], self.base_modes[1]),
            ),
            ("modes_a", fmt_modes(&self.modes_a)),
            ("modes_b", fmt_modes(&self.modes_b)),
            ("use_skip", self.use_skip.to_string()),
            (
                "final_block_activation",
                self.final_block_activation.to_string(),
            ),
            ("variant", self.variant.to_string()),
            ("seed", self.seed.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    /// First field that differs from `other`, as a readable message.
    pub fn first_difference(&self, other: &Self) -> Option<String> {
        let (a, b) = (self.fields(), other.fields());
        a.iter().find_map(|(k, v)| {
            let o = &b[k];
            (v != o).then(|| format!("field `{k}` differs: {v} vs {o}"))
        })
    }
}

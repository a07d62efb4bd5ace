//! Per-image stream selection under a global byte budget.
//!
//! Each image offers a menu of coded candidates `(bytes, quality)`; exactly one
//! is chosen per image to maximize summed quality with total bytes within the
//! budget. Solved exactly by dynamic programming over `granularity`-byte units
//! with ceiling-rounded costs, so a feasible result never exceeds the budget.
//!
//! Ties are broken by lower total bytes, then by the lexicographically smallest
//! choice vector. Qualities are compared in fixed point (1e-12) so ties are exact.

use std::collections::HashMap;

use crate::{Error, Result};

pub const DEFAULT_GRANULARITY: u64 = 64;
const QUALITY_SCALE: f64 = 1e12;
/// Upper bound on DP table cells; beyond this a coarser granularity is needed.
const MAX_TABLE_CELLS: u128 = 1 << 31;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub bytes: u64,
    pub quality: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AllocationProblem {
    pub menus: Vec<Vec<Candidate>>,
    pub budget_bytes: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AllocationResult {
    pub choices: Vec<usize>,
    pub total_bytes: u64,
    pub total_quality: f64,
    pub feasible: bool,
}

fn fixed(q: f64) -> i64 {
    (q * QUALITY_SCALE).round() as i64
}

impl AllocationProblem {
    fn validate(&self) -> Result<()> {
        if self.menus.is_empty() {
            return Err(Error::Argument("allocation problem has no images".into()));
        }
        for (i, menu) in self.menus.iter().enumerate() {
            if menu.is_empty() {
                return Err(Error::Argument(format!("image {i} has no candidates")));
            }
            if menu.len() > u8::MAX as usize + 1 {
                return Err(Error::Argument(format!("image {i} has more than 256 candidates")));
            }
            if let Some(c) = menu.iter().find(|c| !(0.0..=1.0).contains(&c.quality)) {
                return Err(Error::Argument(format!(
                    "image {i} has quality {} outside [0, 1]",
                    c.quality
                )));
            }
        }
        Ok(())
    }

    fn result_for(&self, choices: Vec<usize>, feasible: bool) -> AllocationResult {
        let total_bytes = choices.iter().zip(&self.menus).map(|(&j, m)| m[j].bytes).sum();
        let total_quality = choices.iter().zip(&self.menus).map(|(&j, m)| m[j].quality).sum();
        AllocationResult {
            choices,
            total_bytes,
            total_quality,
            feasible,
        }
    }

    /// Cheapest candidate per image, higher quality then lower index on ties.
    fn all_minimum(&self) -> Vec<usize> {
        self.menus
            .iter()
            .map(|m| {
                (0..m.len())
                    .min_by_key(|&j| (m[j].bytes, -fixed(m[j].quality), j))
                    .unwrap()
            })
            .collect()
    }
}

/// Candidates that can appear in some optimal, tie-broken solution.
fn undominated(menu: &[Candidate], units: &[u64]) -> Vec<usize> {
    (0..menu.len())
        .filter(|&k| {
            !(0..menu.len()).any(|j| {
                j != k
                    && units[j] <= units[k]
                    && menu[j].bytes <= menu[k].bytes
                    && fixed(menu[j].quality) >= fixed(menu[k].quality)
                    && (fixed(menu[j].quality) > fixed(menu[k].quality) || menu[j].bytes < menu[k].bytes || j < k)
            })
        })
        .collect()
}

pub fn allocate(problem: &AllocationProblem, granularity: u64) -> Result<AllocationResult> {
    solve(problem, granularity, true)
}

fn solve(problem: &AllocationProblem, granularity: u64, prune: bool) -> Result<AllocationResult> {
    problem.validate()?;
    if granularity == 0 {
        return Err(Error::Argument("granularity must be at least 1".into()));
    }
    let minimum = problem.all_minimum();
    let min_total: u64 = minimum.iter().zip(&problem.menus).map(|(&j, m)| m[j].bytes).sum();
    if min_total > problem.budget_bytes {
        return Ok(problem.result_for(minimum, false));
    }

    let n = problem.menus.len();
    let cap = (problem.budget_bytes / granularity) as usize;
    if (n as u128) * (cap as u128 + 1) > MAX_TABLE_CELLS {
        return Err(Error::Argument(format!(
            "{n} images x {} budget units is too large; raise the granularity",
            cap + 1
        )));
    }
    let units: Vec<Vec<u64>> = problem
        .menus
        .iter()
        .map(|m| m.iter().map(|c| c.bytes.div_ceil(granularity)).collect())
        .collect();
    let options: Vec<Vec<usize>> = problem
        .menus
        .iter()
        .zip(&units)
        .map(|(m, u)| if prune { undominated(m, u) } else { (0..m.len()).collect() })
        .collect();

    // Suffix DP: best[c] is (quality, -bytes) for images i.. within c units.
    const NONE: (i64, i64) = (i64::MIN, i64::MIN);
    let mut best = vec![(0i64, 0i64); cap + 1];
    let mut choice = vec![0u8; n * (cap + 1)];
    for i in (0..n).rev() {
        let mut next = vec![NONE; cap + 1];
        for (c, slot) in next.iter_mut().enumerate() {
            for &j in &options[i] {
                let u = units[i][j] as usize;
                if u > c || best[c - u] == NONE {
                    continue;
                }
                let (q, nb) = best[c - u];
                let key = (
                    q + fixed(problem.menus[i][j].quality),
                    nb - problem.menus[i][j].bytes as i64,
                );
                // Options are in ascending index order; strict > keeps the smallest index.
                if key > *slot {
                    *slot = key;
                    choice[i * (cap + 1) + c] = j as u8;
                }
            }
        }
        best = next;
    }
    if best[cap] == NONE {
        // Ceiling rounding can hide a fit that exists in true bytes.
        return Ok(problem.result_for(minimum, true));
    }
    let mut c = cap;
    let mut choices = Vec::with_capacity(n);
    for i in 0..n {
        let j = choice[i * (cap + 1) + c] as usize;
        choices.push(j);
        c -= units[i][j] as usize;
    }
    Ok(problem.result_for(choices, true))
}

/// `floor(bpp * total_pixels / 8)`.
pub fn budget_from_bpp(bpp: f64, pixel_counts: &[u64]) -> Result<u64> {
    if !bpp.is_finite() || bpp <= 0.0 {
        return Err(Error::Argument(format!("bpp must be positive, got {bpp}")));
    }
    let pixels: u64 = pixel_counts.iter().sum();
    Ok((bpp * pixels as f64 / 8.0).floor() as u64)
}

/// One image's menu as read from a records file.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageMenu {
    pub image_id: String,
    pub pixels: Option<u64>,
    pub candidate_ids: Vec<String>,
    pub candidates: Vec<Candidate>,
}

/// Parses `image_id candidate_id bytes quality [pixels]` records, one per line.
/// Blank lines and `#` comments are ignored. Images keep first-appearance order.
pub fn parse_records(text: &str) -> Result<Vec<ImageMenu>> {
    let mut menus: Vec<ImageMenu> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let err = |m: String| Error::Parse(format!("records line {}: {m}", lineno + 1));
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 4 && f.len() != 5 {
            return Err(err(format!("expected 4 or 5 fields, got {}", f.len())));
        }
        let bytes: u64 = f[2].parse().map_err(|_| err(format!("bad byte count {:?}", f[2])))?;
        let quality: f64 = f[3].parse().map_err(|_| err(format!("bad quality {:?}", f[3])))?;
        if !(0.0..=1.0).contains(&quality) {
            return Err(err(format!("quality {quality} outside [0, 1]")));
        }
        let pixels = match f.get(4) {
            Some(p) => Some(p.parse::<u64>().map_err(|_| err(format!("bad pixel count {p:?}")))?),
            None => None,
        };
        let slot = *index.entry(f[0].to_string()).or_insert_with(|| {
            menus.push(ImageMenu {
                image_id: f[0].to_string(),
                pixels: None,
                candidate_ids: Vec::new(),
                candidates: Vec::new(),
            });
            menus.len() - 1
        });
        let menu = &mut menus[slot];
        if menu.candidate_ids.iter().any(|c| c == f[1]) {
            return Err(err(format!("duplicate candidate {:?} for image {:?}", f[1], f[0])));
        }
        if let Some(p) = pixels {
            match menu.pixels {
                Some(q) if q != p => return Err(err(format!("image {:?} pixel count {p} != {q}", f[0]))),
                _ => menu.pixels = Some(p),
            }
        }
        menu.candidate_ids.push(f[1].to_string());
        menu.candidates.push(Candidate { bytes, quality });
    }
    Ok(menus)
}

//! Context-aware cascade construction.
//!
//! A cascade is the ordered list of challenges issued during one session. The
//! participant's [`Context`] decides which challenges are eligible at all; a
//! utility blending deployment-side hardness with participant usability then
//! ranks them, and the selected items are emitted in non-decreasing utility so
//! the hardest challenges come last.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{Catalog, Category, Challenge, Equipment, Mode};

const INTERVIEW: &str = include_str!("../data/contexts/interview.json");
const EXECUTIVE_CALL: &str = include_str!("../data/contexts/executive-call.json");

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CascadeError {
    #[error("no challenge is eligible in this context")]
    EmptyEligibleSet,
    #[error("no hardness value for challenge `{0}`")]
    MissingHardness(String),
    #[error("cascade length must be >= 1")]
    ZeroLength,
    #[error("invalid context: {0}")]
    InvalidContext(String),
    #[error("unknown context preset `{0}`")]
    UnknownPreset(String),
}

/// Matches a whole category, or one subcategory within it.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CategorySelector {
    pub category: Category,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subcategory: Option<String>,
}

impl CategorySelector {
    pub fn matches(&self, challenge: &Challenge) -> bool {
        self.category == challenge.category
            && self
                .subcategory
                .as_deref()
                .is_none_or(|s| s == challenge.subcategory)
    }
}

/// The participant's situation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Context {
    #[serde(default)]
    pub name: String,
    pub allowed_modes: BTreeSet<Mode>,
    #[serde(default)]
    pub excluded_categories: Vec<CategorySelector>,
    pub has_physical_articles: bool,
    pub has_trusted_device: bool,
    /// 1 ranks purely by hardness, 0 purely by usability.
    pub security_level: f64,
    /// Minimum normalized usability a challenge needs to be eligible.
    #[serde(default)]
    pub usability_floor: f64,
}

impl Context {
    /// A context in which every challenge is eligible.
    pub fn permissive(security_level: f64) -> Self {
        Self {
            name: "permissive".into(),
            allowed_modes: [Mode::Active, Mode::Passive].into_iter().collect(),
            excluded_categories: vec![],
            has_physical_articles: true,
            has_trusted_device: true,
            security_level,
            usability_floor: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), CascadeError> {
        if self.allowed_modes.is_empty() {
            return Err(CascadeError::InvalidContext(
                "allowed_modes must not be empty".into(),
            ));
        }
        for (name, v) in [
            ("security_level", self.security_level),
            ("usability_floor", self.usability_floor),
        ] {
            if !(v.is_finite() && (0.0..=1.0).contains(&v)) {
                return Err(CascadeError::InvalidContext(format!(
                    "{name} must be in [0, 1], got {v}"
                )));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, CascadeError> {
        let ctx: Context =
            serde_json::from_str(text).map_err(|e| CascadeError::InvalidContext(e.to_string()))?;
        ctx.validate()?;
        Ok(ctx)
    }

    /// Built-in presets: `interview` and `executive-call`.
    pub fn preset(name: &str) -> Result<Self, CascadeError> {
        let text = match name {
            "interview" => INTERVIEW,
            "executive-call" => EXECUTIVE_CALL,
            other => return Err(CascadeError::UnknownPreset(other.to_string())),
        };
        Ok(Self::from_json(text).expect("bundled preset is valid"))
    }

    pub fn preset_names() -> &'static [&'static str] {
        &["interview", "executive-call"]
    }

    pub fn admits(&self, c: &Challenge) -> bool {
        self.allowed_modes.contains(&c.mode)
            && !self.excluded_categories.iter().any(|s| s.matches(c))
            && (!c.requires(Equipment::PhysicalArticle) || self.has_physical_articles)
            && (!c.requires(Equipment::TrustedDevice) || self.has_trusted_device)
            && c.usability_score() >= self.usability_floor
    }
}

/// Challenges of `suite` that the context allows, in suite order.
pub fn filter_eligible<'a>(suite: &'a [Challenge], ctx: &Context) -> Vec<&'a Challenge> {
    suite.iter().filter(|c| ctx.admits(c)).collect()
}

/// Convex combination of hardness and usability steered by the security level.
pub fn blend_utility(security_level: f64, hardness: f64, usability: f64) -> f64 {
    security_level * hardness + (1.0 - security_level) * usability
}

pub fn utility(
    challenge: &Challenge,
    ctx: &Context,
    hardness: &BTreeMap<String, f64>,
) -> Result<f64, CascadeError> {
    let h = *hardness
        .get(&challenge.id)
        .ok_or_else(|| CascadeError::MissingHardness(challenge.id.clone()))?;
    Ok(blend_utility(
        ctx.security_level,
        h.clamp(0.0, 1.0),
        challenge.usability_score(),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeItem {
    pub id: String,
    pub utility: f64,
}

/// An ordered list of challenges with non-decreasing utility.
///
/// Serializes as a bare JSON array of `{id, utility}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Cascade {
    pub items: Vec<CascadeItem>,
    pub target_len: usize,
}

impl Cascade {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.items.iter().map(|i| i.id.as_str())
    }

    pub fn contains(&self, id: &str) -> bool {
        self.items.iter().any(|i| i.id == id)
    }

    pub fn is_non_decreasing(&self) -> bool {
        self.items.windows(2).all(|w| w[1].utility >= w[0].utility)
    }
}

impl Serialize for Cascade {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.items.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Cascade {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let items = Vec::<CascadeItem>::deserialize(deserializer)?;
        Ok(Cascade {
            target_len: items.len(),
            items,
        })
    }
}

/// How the cascade picks among more eligible challenges than it needs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    /// Top-n by utility.
    #[default]
    Deterministic,
    /// Draw without replacement with probability proportional to utility.
    Weighted,
}

fn rank_desc(a: &CascadeItem, b: &CascadeItem) -> std::cmp::Ordering {
    b.utility.total_cmp(&a.utility).then_with(|| a.id.cmp(&b.id))
}

fn emit_asc(a: &CascadeItem, b: &CascadeItem) -> std::cmp::Ordering {
    a.utility.total_cmp(&b.utility).then_with(|| a.id.cmp(&b.id))
}

/// Builds a cascade of at most `n` challenges from `suite`.
///
/// Selected items are emitted by ascending utility, ties broken by id.
pub fn build_cascade(
    suite: &[Challenge],
    ctx: &Context,
    hardness: &BTreeMap<String, f64>,
    n: usize,
    sampling: Sampling,
    rng_seed: u64,
) -> Result<Cascade, CascadeError> {
    if n == 0 {
        return Err(CascadeError::ZeroLength);
    }
    ctx.validate()?;
    let eligible = filter_eligible(suite, ctx);
    if eligible.is_empty() {
        return Err(CascadeError::EmptyEligibleSet);
    }
    let mut ranked = eligible
        .into_iter()
        .map(|c| {
            Ok(CascadeItem {
                id: c.id.clone(),
                utility: utility(c, ctx, hardness)?,
            })
        })
        .collect::<Result<Vec<_>, CascadeError>>()?;
    ranked.sort_by(rank_desc);

    let take = n.min(ranked.len());
    let mut selected = match sampling {
        Sampling::Deterministic => {
            ranked.truncate(take);
            ranked
        }
        Sampling::Weighted => weighted_without_replacement(ranked, take, rng_seed),
    };
    selected.sort_by(emit_asc);
    Ok(Cascade {
        items: selected,
        target_len: n,
    })
}

fn weighted_without_replacement(
    mut pool: Vec<CascadeItem>,
    take: usize,
    seed: u64,
) -> Vec<CascadeItem> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(take);
    while out.len() < take {
        let total: f64 = pool.iter().map(|i| i.utility.max(0.0)).sum();
        let index = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = pool.len() - 1;
            for (i, item) in pool.iter().enumerate() {
                target -= item.utility.max(0.0);
                if target < 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.random_range(0..pool.len())
        };
        out.push(pool.remove(index));
    }
    out
}

/// Convenience: catalog challenges restricted to a qualified id set.
pub fn suite_from_ids(catalog: &Catalog, ids: &BTreeSet<String>) -> Vec<Challenge> {
    catalog
        .challenges()
        .iter()
        .filter(|c| ids.contains(&c.id))
        .cloned()
        .collect()
}

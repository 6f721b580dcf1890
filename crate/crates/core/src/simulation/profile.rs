//! Pipeline profiles: per-challenge realism and compliance behavior of a
//! genuine participant or a real-time deepfake pipeline.
//!
//! The shipped numbers are synthetic. They encode only qualitative facts:
//! genuine feeds look best, LDFL shows the most artifacts, HDFL the fewest,
//! FSGAN sits between them, and LIA looks clean but cannot follow challenges
//! that need expression or facial distortion.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{Catalog, Category, Challenge, Mode};

const BUNDLED: [(&str, &str); 5] = [
    ("genuine", include_str!("../../data/profiles/genuine.json")),
    ("ldfl", include_str!("../../data/profiles/ldfl.json")),
    ("hdfl", include_str!("../../data/profiles/hdfl.json")),
    ("fsgan", include_str!("../../data/profiles/fsgan.json")),
    ("lia", include_str!("../../data/profiles/lia.json")),
];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProfileError {
    #[error("profile {source_name}: {message}")]
    Schema { source_name: String, message: String },
    #[error("profile {profile}: {message}")]
    Invalid { profile: ProfileKind, message: String },
    #[error("profile {profile} has no entry for challenge `{challenge}`")]
    UnknownChallenge { profile: ProfileKind, challenge: String },
    #[error("profile set is missing {0}")]
    MissingProfile(ProfileKind),
    #[error("duplicate {0} profile")]
    DuplicateProfile(ProfileKind),
    #[error("challenge `{challenge}`: {message}")]
    Ordering { challenge: String, message: String },
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ProfileKind {
    #[serde(alias = "genuine")]
    Genuine,
    #[serde(rename = "LDFL", alias = "ldfl")]
    Ldfl,
    #[serde(rename = "HDFL", alias = "hdfl")]
    Hdfl,
    #[serde(rename = "FSGAN", alias = "fsgan")]
    Fsgan,
    #[serde(rename = "LIA", alias = "lia")]
    Lia,
}

impl ProfileKind {
    pub const ALL: [ProfileKind; 5] = [
        ProfileKind::Genuine,
        ProfileKind::Ldfl,
        ProfileKind::Hdfl,
        ProfileKind::Fsgan,
        ProfileKind::Lia,
    ];

    pub const FAKES: [ProfileKind; 4] = [
        ProfileKind::Ldfl,
        ProfileKind::Hdfl,
        ProfileKind::Fsgan,
        ProfileKind::Lia,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ProfileKind::Genuine => "Genuine",
            ProfileKind::Ldfl => "LDFL",
            ProfileKind::Hdfl => "HDFL",
            ProfileKind::Fsgan => "FSGAN",
            ProfileKind::Lia => "LIA",
        }
    }

    pub fn is_fake(self) -> bool {
        self != ProfileKind::Genuine
    }
}

impl fmt::Display for ProfileKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ProfileKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ProfileKind::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown pipeline `{s}` (expected genuine, ldfl, hdfl, fsgan or lia)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChallengeBehavior {
    pub realism_mean: f64,
    pub realism_std: f64,
    pub compliance_prob: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformKind {
    Flip,
    NoiseAddition,
    ColorFilter,
    Cutout,
    FeedDuplication { extra_faces: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PassiveTransform {
    pub kind: TransformKind,
    /// Extra anomaly the transform induces on a manipulated feed.
    pub degradation_delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineProfile {
    pub name: ProfileKind,
    /// `C` in `fps(n) = min(fps_max, C / n)`.
    pub fps_capacity: f64,
    pub fps_max: f64,
    pub per_challenge: BTreeMap<String, ChallengeBehavior>,
    /// Transforms applied for passive challenges, keyed by challenge id.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub passive: BTreeMap<String, PassiveTransform>,
}

fn unit(x: f64) -> bool {
    x.is_finite() && (0.0..=1.0).contains(&x)
}

impl PipelineProfile {
    pub fn from_json(text: &str, source_name: &str) -> Result<Self, ProfileError> {
        let profile: Self = serde_json::from_str(text).map_err(|e| ProfileError::Schema {
            source_name: source_name.to_string(),
            message: e.to_string(),
        })?;
        profile.validate()?;
        Ok(profile)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("profile serializes");
        s.push('\n');
        s
    }

    pub fn behavior(&self, challenge_id: &str) -> Result<&ChallengeBehavior, ProfileError> {
        self.per_challenge
            .get(challenge_id)
            .ok_or_else(|| ProfileError::UnknownChallenge {
                profile: self.name,
                challenge: challenge_id.to_string(),
            })
    }

    /// Field ranges only; cross-profile orderings live in [`ProfileSet::validate`].
    pub fn validate(&self) -> Result<(), ProfileError> {
        let bad = |message: String| ProfileError::Invalid {
            profile: self.name,
            message,
        };
        if !(self.fps_capacity.is_finite() && self.fps_capacity > 0.0) {
            return Err(bad(format!("fps_capacity must be > 0, got {}", self.fps_capacity)));
        }
        if !(self.fps_max.is_finite() && self.fps_max > 0.0) {
            return Err(bad(format!("fps_max must be > 0, got {}", self.fps_max)));
        }
        for (id, b) in &self.per_challenge {
            if !unit(b.realism_mean) {
                return Err(bad(format!("{id}: realism_mean {} not in [0, 1]", b.realism_mean)));
            }
            if !(b.realism_std.is_finite() && b.realism_std > 0.0) {
                return Err(bad(format!("{id}: realism_std must be > 0, got {}", b.realism_std)));
            }
            if !unit(b.compliance_prob) {
                return Err(bad(format!(
                    "{id}: compliance_prob {} not in [0, 1]",
                    b.compliance_prob
                )));
            }
        }
        for (id, t) in &self.passive {
            if !unit(t.degradation_delta) {
                return Err(bad(format!(
                    "{id}: degradation_delta {} not in [0, 1]",
                    t.degradation_delta
                )));
            }
            if !self.name.is_fake() && t.degradation_delta != 0.0 {
                return Err(bad(format!("{id}: genuine degradation_delta must be 0")));
            }
        }
        Ok(())
    }

    /// A copy with every realism mean moved by `offset`, clamped to `[0, 1]`.
    pub fn shifted(&self, offset: f64) -> Self {
        let mut out = self.clone();
        for b in out.per_challenge.values_mut() {
            b.realism_mean = (b.realism_mean + offset).clamp(0.0, 1.0);
        }
        out
    }
}

/// Challenges an image-animation pipeline cannot follow.
pub fn needs_expression_or_distortion(c: &Challenge) -> bool {
    c.mode == Mode::Active
        && matches!(c.category, Category::FacialExpression | Category::FacialDistortion)
}

/// The genuine profile plus one profile per pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileSet {
    profiles: BTreeMap<ProfileKind, PipelineProfile>,
}

impl ProfileSet {
    pub fn new(profiles: Vec<PipelineProfile>) -> Result<Self, ProfileError> {
        let mut map = BTreeMap::new();
        for p in profiles {
            p.validate()?;
            let kind = p.name;
            if map.insert(kind, p).is_some() {
                return Err(ProfileError::DuplicateProfile(kind));
            }
        }
        for kind in ProfileKind::ALL {
            if !map.contains_key(&kind) {
                return Err(ProfileError::MissingProfile(kind));
            }
        }
        Ok(Self { profiles: map })
    }

    pub fn bundled() -> Self {
        let profiles = BUNDLED
            .iter()
            .map(|(name, text)| PipelineProfile::from_json(text, name).expect("bundled profile"))
            .collect();
        Self::new(profiles).expect("bundled profile set")
    }

    pub fn bundled_json() -> impl Iterator<Item = (&'static str, &'static str)> {
        BUNDLED.into_iter()
    }

    /// Reads `genuine.json`, `ldfl.json`, `hdfl.json`, `fsgan.json` and
    /// `lia.json` from `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self, ProfileError> {
        let mut profiles = Vec::new();
        for (name, _) in BUNDLED {
            let path = dir.join(format!("{name}.json"));
            let text = std::fs::read_to_string(&path).map_err(|e| ProfileError::Io {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
            profiles.push(PipelineProfile::from_json(&text, &path.display().to_string())?);
        }
        Self::new(profiles)
    }

    pub fn from_documents<'a>(
        docs: impl IntoIterator<Item = (&'a str, &'a str)>,
    ) -> Result<Self, ProfileError> {
        let profiles = docs
            .into_iter()
            .map(|(name, text)| PipelineProfile::from_json(text, name))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(profiles)
    }

    pub fn get(&self, kind: ProfileKind) -> &PipelineProfile {
        &self.profiles[&kind]
    }

    pub fn genuine(&self) -> &PipelineProfile {
        self.get(ProfileKind::Genuine)
    }

    pub fn iter(&self) -> impl Iterator<Item = &PipelineProfile> {
        self.profiles.values()
    }

    /// Checks coverage of `catalog` and the cross-profile orderings:
    /// genuine realism is never below a pipeline's, genuine always complies
    /// with active challenges, anomaly is ordered LDFL >= FSGAN >= HDFL, and
    /// LIA mostly fails expression and distortion challenges.
    pub fn validate(&self, catalog: &Catalog) -> Result<(), ProfileError> {
        for c in catalog.challenges() {
            let g = self.genuine().behavior(&c.id)?;
            for kind in ProfileKind::FAKES {
                let f = self.get(kind).behavior(&c.id)?;
                if f.realism_mean > g.realism_mean {
                    return Err(ProfileError::Ordering {
                        challenge: c.id.clone(),
                        message: format!(
                            "{kind} realism {} exceeds genuine {}",
                            f.realism_mean, g.realism_mean
                        ),
                    });
                }
            }
            if c.mode == Mode::Active && g.compliance_prob != 1.0 {
                return Err(ProfileError::Ordering {
                    challenge: c.id.clone(),
                    message: format!("genuine compliance_prob is {}, not 1", g.compliance_prob),
                });
            }
            let ldfl = self.get(ProfileKind::Ldfl).behavior(&c.id)?.realism_mean;
            let fsgan = self.get(ProfileKind::Fsgan).behavior(&c.id)?.realism_mean;
            let hdfl = self.get(ProfileKind::Hdfl).behavior(&c.id)?.realism_mean;
            if !(ldfl <= fsgan && fsgan <= hdfl) {
                return Err(ProfileError::Ordering {
                    challenge: c.id.clone(),
                    message: format!(
                        "anomaly must satisfy LDFL >= FSGAN >= HDFL (realism {ldfl}, {fsgan}, {hdfl})"
                    ),
                });
            }
            let lia = self.get(ProfileKind::Lia).behavior(&c.id)?;
            if needs_expression_or_distortion(c) && lia.compliance_prob >= 0.5 {
                return Err(ProfileError::Ordering {
                    challenge: c.id.clone(),
                    message: format!("LIA compliance_prob {} must be < 0.5", lia.compliance_prob),
                });
            }
            if c.mode == Mode::Passive {
                for p in self.iter() {
                    if !p.passive.contains_key(&c.id) {
                        return Err(ProfileError::Ordering {
                            challenge: c.id.clone(),
                            message: format!("{} has no passive transform", p.name),
                        });
                    }
                }
            }
        }
        Ok(())
    }
}

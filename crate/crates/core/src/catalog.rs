//! Machine-readable challenge catalog.
//!
//! A catalog is a JSON document with a single top-level `"challenges"` array.
//! Every entry carries its taxonomy position (category and subcategory), whether
//! it is active or passive, a benefit profile, and the compliance check used to
//! verify that a participant actually performed it. Parsing is strict: unknown
//! keys are rejected, and every structural invariant is checked at load time so
//! that a `Catalog` value in memory is always valid.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

const BUNDLED_CATALOG: &str = include_str!("../data/catalog.json");

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CatalogError {
    #[error("schema error at {location}: {message}")]
    Schema { location: String, message: String },
    #[error("duplicate challenge id `{0}`")]
    DuplicateId(String),
    #[error("challenge `{id}`: subcategory `{subcategory}` is not admissible for category {category}")]
    InvalidSubcategory {
        id: String,
        category: Category,
        subcategory: String,
    },
    #[error("challenge `{0}` is passive but does not require a trusted device")]
    PassiveWithoutTrustedDevice(String),
    #[error("challenge `{id}`: benefit map `{map}` is missing key `{key}`")]
    MissingBenefitKey {
        id: String,
        map: &'static str,
        key: String,
    },
    #[error("challenge `{id}`: deployability benefit `{key}` cannot be quasi")]
    QuasiDeployability { id: String, key: String },
    #[error("challenge `{0}` is passive but not marked physically effortless")]
    PassiveNotEffortless(String),
    #[error("challenge `{id}`: invalid compliance spec: {reason}")]
    InvalidCompliance { id: String, reason: String },
    #[error("challenge `{id}`: invalid equipment set: {reason}")]
    InvalidEquipment { id: String, reason: String },
    #[error("unknown benefit key `{0}`")]
    UnknownBenefitKey(String),
    #[error("benefit weight for `{key}` must be finite and non-negative, got {value}")]
    InvalidWeight { key: String, value: f64 },
}

macro_rules! string_enum {
    (
        $(#[$meta:meta])*
        pub enum $name:ident { $($variant:ident => $text:literal),+ $(,)? }
    ) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        pub enum $name {
            $(#[serde(rename = $text)] $variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = String;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                Self::ALL
                    .iter()
                    .copied()
                    .find(|v| v.as_str() == s)
                    .ok_or_else(|| format!("unknown {} `{}`", stringify!($name), s))
            }
        }
    };
}

string_enum! {
    /// Top-level taxonomy category.
    pub enum Category {
        Occlusion => "occlusion",
        FacialExpression => "facial_expression",
        FacialDistortion => "facial_distortion",
        Surroundings => "surroundings",
        AdditionalDetails => "additional_details",
    }
}

impl Category {
    /// Admissible subcategories, or `None` when the category is open-ended and
    /// accepts any non-empty subcategory name.
    pub fn subcategories(self) -> Option<&'static [&'static str]> {
        match self {
            Category::Occlusion => Some(&["human-introduced", "real-objects", "synthetic"]),
            Category::FacialExpression => {
                Some(&["human-introduced", "lip-movement", "micro-expressions"])
            }
            Category::FacialDistortion => Some(&["human-introduced", "geometric-transforms"]),
            Category::Surroundings => Some(&[
                "human-introduced",
                "software-introduced",
                "synthetic-background",
            ]),
            Category::AdditionalDetails => None,
        }
    }

    pub fn admits(self, subcategory: &str) -> bool {
        match self.subcategories() {
            Some(list) => list.contains(&subcategory),
            None => !subcategory.trim().is_empty(),
        }
    }
}

string_enum! {
    pub enum Mode {
        Active => "active",
        Passive => "passive",
    }
}

string_enum! {
    pub enum Equipment {
        None => "none",
        PhysicalArticle => "physical_article",
        TrustedDevice => "trusted_device",
    }
}

string_enum! {
    /// Status of a single benefit: offered, partially offered, or not offered.
    pub enum TriState {
        Offered => "offered",
        Quasi => "quasi",
        NotOffered => "not_offered",
    }
}

impl TriState {
    pub fn numeric(self) -> f64 {
        match self {
            TriState::Offered => 1.0,
            TriState::Quasi => 0.5,
            TriState::NotOffered => 0.0,
        }
    }
}

string_enum! {
    pub enum UsabilityBenefit {
        EasyToComprehend => "easy_to_comprehend",
        AppropriateToRequest => "appropriate_to_request",
        PhysicallyEffortless => "physically_effortless",
        NoEquipmentNeeded => "no_equipment_needed",
        DetectedByHumans => "detected_by_humans",
        HighSensitivityTest => "high_sensitivity_test",
        Accessible => "accessible",
    }
}

string_enum! {
    pub enum DeployabilityBenefit {
        MarginalCost => "marginal_cost",
        ServerCompatible => "server_compatible",
        ClientCompatible => "client_compatible",
    }
}

string_enum! {
    /// Components of a face-swapping deepfake pipeline that a challenge may stress.
    pub enum PipelineComponent {
        FaceDetector => "face_detector",
        LandmarkDetection => "landmark_detection",
        FaceAlignment => "face_alignment",
        Segmentation => "segmentation",
        FaceSwapper => "face_swapper",
        Blending => "blending",
        ColorCorrection => "color_correction",
    }
}

string_enum! {
    /// Scalar feature used to verify compliance with an active challenge.
    pub enum Channel {
        YawAngle => "yaw_angle",
        ExpressionIntensity => "expression_intensity",
        OcclusionFraction => "occlusion_fraction",
        LuminanceShift => "luminance_shift",
        None => "none",
    }
}

/// A participant-facing or deployment benefit that can be weighted in
/// [`benefit_score`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Benefit {
    Usability(UsabilityBenefit),
    Deployability(DeployabilityBenefit),
}

impl FromStr for Benefit {
    type Err = CatalogError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Ok(u) = s.parse::<UsabilityBenefit>() {
            return Ok(Benefit::Usability(u));
        }
        if let Ok(d) = s.parse::<DeployabilityBenefit>() {
            return Ok(Benefit::Deployability(d));
        }
        Err(CatalogError::UnknownBenefitKey(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenefitProfile {
    pub usability: BTreeMap<UsabilityBenefit, TriState>,
    pub deployability: BTreeMap<DeployabilityBenefit, TriState>,
    pub adversarial: BTreeMap<PipelineComponent, TriState>,
}

impl BenefitProfile {
    pub fn get(&self, benefit: Benefit) -> TriState {
        // Completeness of every map is a load-time invariant.
        match benefit {
            Benefit::Usability(u) => self.usability[&u],
            Benefit::Deployability(d) => self.deployability[&d],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComplianceSpec {
    pub channel: Channel,
    /// Minimum range the channel must sweep: degrees for yaw, a fraction otherwise.
    pub min_delta: f64,
    /// Window, in seconds, within which the range must be reached.
    pub within_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Challenge {
    pub id: String,
    pub name: String,
    pub category: Category,
    pub subcategory: String,
    pub mode: Mode,
    pub benefits: BenefitProfile,
    pub compliance: ComplianceSpec,
    pub required_equipment: BTreeSet<Equipment>,
}

impl Challenge {
    pub fn is_passive(&self) -> bool {
        self.mode == Mode::Passive
    }

    pub fn requires(&self, equipment: Equipment) -> bool {
        self.required_equipment.contains(&equipment)
    }

    /// Unweighted mean of the usability benefits, in `[0, 1]`.
    pub fn usability_score(&self) -> f64 {
        let sum: f64 = self.benefits.usability.values().map(|t| t.numeric()).sum();
        sum / UsabilityBenefit::ALL.len() as f64
    }

    fn validate(&self) -> Result<(), CatalogError> {
        let id = || self.id.clone();
        if self.id.trim().is_empty() {
            return Err(CatalogError::Schema {
                location: "challenge".into(),
                message: "empty id".into(),
            });
        }
        if !self.category.admits(&self.subcategory) {
            return Err(CatalogError::InvalidSubcategory {
                id: id(),
                category: self.category,
                subcategory: self.subcategory.clone(),
            });
        }
        if self.required_equipment.is_empty() {
            return Err(CatalogError::InvalidEquipment {
                id: id(),
                reason: "use [\"none\"] when nothing is required".into(),
            });
        }
        if self.requires(Equipment::None) && self.required_equipment.len() > 1 {
            return Err(CatalogError::InvalidEquipment {
                id: id(),
                reason: "`none` cannot be combined with other equipment".into(),
            });
        }
        if self.is_passive() && !self.requires(Equipment::TrustedDevice) {
            return Err(CatalogError::PassiveWithoutTrustedDevice(id()));
        }

        let b = &self.benefits;
        for u in UsabilityBenefit::ALL {
            if !b.usability.contains_key(u) {
                return Err(CatalogError::MissingBenefitKey {
                    id: id(),
                    map: "usability",
                    key: u.to_string(),
                });
            }
        }
        for d in DeployabilityBenefit::ALL {
            match b.deployability.get(d) {
                None => {
                    return Err(CatalogError::MissingBenefitKey {
                        id: id(),
                        map: "deployability",
                        key: d.to_string(),
                    })
                }
                Some(TriState::Quasi) => {
                    return Err(CatalogError::QuasiDeployability {
                        id: id(),
                        key: d.to_string(),
                    })
                }
                Some(_) => {}
            }
        }
        for c in PipelineComponent::ALL {
            if !b.adversarial.contains_key(c) {
                return Err(CatalogError::MissingBenefitKey {
                    id: id(),
                    map: "adversarial",
                    key: c.to_string(),
                });
            }
        }
        if self.is_passive()
            && b.usability[&UsabilityBenefit::PhysicallyEffortless] != TriState::Offered
        {
            return Err(CatalogError::PassiveNotEffortless(id()));
        }

        let c = &self.compliance;
        if !(c.min_delta.is_finite() && c.min_delta >= 0.0) {
            return Err(CatalogError::InvalidCompliance {
                id: id(),
                reason: format!("min_delta must be >= 0, got {}", c.min_delta),
            });
        }
        if !(c.within_s.is_finite() && c.within_s > 0.0) {
            return Err(CatalogError::InvalidCompliance {
                id: id(),
                reason: format!("within_s must be > 0, got {}", c.within_s),
            });
        }
        if c.channel == Channel::None && !self.is_passive() {
            return Err(CatalogError::InvalidCompliance {
                id: id(),
                reason: "channel `none` is reserved for passive challenges".into(),
            });
        }
        if c.channel != Channel::YawAngle && c.channel != Channel::None && c.min_delta > 1.0 {
            return Err(CatalogError::InvalidCompliance {
                id: id(),
                reason: format!("fractional channel {} needs min_delta <= 1", c.channel),
            });
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CatalogDocument<C> {
    challenges: C,
}

/// A validated, immutable set of challenges.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Catalog {
    challenges: Vec<Challenge>,
}

impl Catalog {
    /// Parses and validates a catalog document.
    pub fn from_json(document: &str) -> Result<Self, CatalogError> {
        let raw: CatalogDocument<Vec<serde_json::Value>> =
            serde_json::from_str(document).map_err(|e| CatalogError::Schema {
                location: "document".into(),
                message: e.to_string(),
            })?;
        let mut challenges = Vec::with_capacity(raw.challenges.len());
        for (index, value) in raw.challenges.into_iter().enumerate() {
            let label = value
                .get("id")
                .and_then(|v| v.as_str())
                .map(|id| format!("challenges[{index}] (`{id}`)"))
                .unwrap_or_else(|| format!("challenges[{index}]"));
            let challenge: Challenge =
                serde_json::from_value(value).map_err(|e| CatalogError::Schema {
                    location: label,
                    message: e.to_string(),
                })?;
            challenges.push(challenge);
        }
        Self::new(challenges)
    }

    pub fn new(challenges: Vec<Challenge>) -> Result<Self, CatalogError> {
        let mut seen = BTreeSet::new();
        for c in &challenges {
            if !seen.insert(c.id.as_str()) {
                return Err(CatalogError::DuplicateId(c.id.clone()));
            }
            c.validate()?;
        }
        Ok(Self { challenges })
    }

    /// The catalog shipped with the crate.
    pub fn bundled() -> Self {
        Self::from_json(BUNDLED_CATALOG).expect("bundled catalog is valid")
    }

    pub fn bundled_json() -> &'static str {
        BUNDLED_CATALOG
    }

    pub fn to_json(&self) -> String {
        let doc = CatalogDocument {
            challenges: &self.challenges,
        };
        let mut out = serde_json::to_string_pretty(&doc).expect("catalog serializes");
        out.push('\n');
        out
    }

    pub fn challenges(&self) -> &[Challenge] {
        &self.challenges
    }

    pub fn get(&self, id: &str) -> Option<&Challenge> {
        self.challenges.iter().find(|c| c.id == id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.challenges.iter().map(|c| c.id.as_str())
    }

    pub fn len(&self) -> usize {
        self.challenges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.challenges.is_empty()
    }
}

impl Serialize for Catalog {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        CatalogDocument {
            challenges: &self.challenges,
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Catalog {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let doc = CatalogDocument::<Vec<Challenge>>::deserialize(deserializer)?;
        Catalog::new(doc.challenges).map_err(serde::de::Error::custom)
    }
}

/// Weighted sum of a challenge's usability and deployability benefits.
///
/// Keys are benefit names (`"easy_to_comprehend"`, `"marginal_cost"`, ...).
/// The result lies in `[0, Σ weights]`.
pub fn benefit_score(
    challenge: &Challenge,
    weights: &BTreeMap<String, f64>,
) -> Result<f64, CatalogError> {
    let mut score = 0.0;
    for (key, &weight) in weights {
        let benefit: Benefit = key.parse()?;
        if !(weight.is_finite() && weight >= 0.0) {
            return Err(CatalogError::InvalidWeight {
                key: key.clone(),
                value: weight,
            });
        }
        score += weight * challenge.benefits.get(benefit).numeric();
    }
    Ok(score)
}

/// Unit weight on every usability benefit.
pub fn default_usability_weights() -> BTreeMap<String, f64> {
    UsabilityBenefit::ALL
        .iter()
        .map(|u| (u.as_str().to_string(), 1.0))
        .collect()
}

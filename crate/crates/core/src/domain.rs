//! The closed morality-frames taxonomy: five moral foundations, the sixteen
//! entity roles they own, role polarity, and the definition catalog used to
//! describe labels inside prompts.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::DomainError;

/// A label type that can appear as a generation target in a prompt.
///
/// `surface_forms` lists the canonical string first, then any aliases the
/// output parser should accept.
pub trait Label: Copy + Eq + Ord + std::hash::Hash + fmt::Debug + Send + Sync + 'static {
    fn canonical(&self) -> &'static str;

    fn aliases(&self) -> &'static [&'static str] {
        &[]
    }

    fn surface_forms(&self) -> Vec<&'static str> {
        let mut forms = vec![self.canonical()];
        forms.extend_from_slice(self.aliases());
        forms
    }
}

/// Lowercase and collapse internal whitespace. Used for label lookups.
pub(crate) fn fold_label(s: &str) -> String {
    s.split_whitespace()
        .map(|w| w.to_lowercase())
        .collect::<Vec<_>>()
        .join(" ")
}

fn lookup<L: Label>(all: &[L], s: &str) -> Option<L> {
    let folded = fold_label(s);
    all.iter()
        .copied()
        .find(|l| l.surface_forms().iter().any(|f| fold_label(f) == folded))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Foundation {
    CareHarm,
    FairnessCheating,
    LoyaltyBetrayal,
    AuthoritySubversion,
    PurityDegradation,
}

impl Foundation {
    pub const ALL: [Foundation; 5] = [
        Foundation::CareHarm,
        Foundation::FairnessCheating,
        Foundation::LoyaltyBetrayal,
        Foundation::AuthoritySubversion,
        Foundation::PurityDegradation,
    ];

    /// Roles owned by this foundation, in taxonomy order.
    pub fn roles(self) -> &'static [Role] {
        use Role::*;
        match self {
            Foundation::CareHarm => &[TargetOfCareHarm, EntityCausingHarm, EntityProvidingCare],
            Foundation::FairnessCheating => &[
                TargetOfFairnessCheating,
                EntityEnsuringFairness,
                EntityDoingCheating,
            ],
            Foundation::LoyaltyBetrayal => &[
                TargetOfLoyaltyBetrayal,
                EntityBeingLoyal,
                EntityDoingBetrayal,
            ],
            Foundation::AuthoritySubversion => &[
                JustifiedAuthority,
                JustifiedAuthorityOver,
                FailingAuthority,
                FailingAuthorityOver,
            ],
            Foundation::PurityDegradation => &[
                TargetOfPurityDegradation,
                EntityPreservingPurity,
                EntityCausingDegradation,
            ],
        }
    }

    /// The single role of this foundation that carries negative sentiment.
    pub fn negative_role(self) -> Role {
        match self {
            Foundation::CareHarm => Role::EntityCausingHarm,
            Foundation::FairnessCheating => Role::EntityDoingCheating,
            Foundation::LoyaltyBetrayal => Role::EntityDoingBetrayal,
            Foundation::AuthoritySubversion => Role::FailingAuthority,
            Foundation::PurityDegradation => Role::EntityCausingDegradation,
        }
    }

    pub fn positive_roles(self) -> Vec<Role> {
        self.roles()
            .iter()
            .copied()
            .filter(|r| r.polarity() == Polarity::Positive)
            .collect()
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl Label for Foundation {
    fn canonical(&self) -> &'static str {
        match self {
            Foundation::CareHarm => "Care/Harm",
            Foundation::FairnessCheating => "Fairness/Cheating",
            Foundation::LoyaltyBetrayal => "Loyalty/Betrayal",
            Foundation::AuthoritySubversion => "Authority/Subversion",
            Foundation::PurityDegradation => "Purity/Degradation",
        }
    }

    fn aliases(&self) -> &'static [&'static str] {
        match self {
            Foundation::AuthoritySubversion => &["Auth./Subversion"],
            _ => &[],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Role {
    TargetOfCareHarm,
    EntityCausingHarm,
    EntityProvidingCare,
    TargetOfFairnessCheating,
    EntityEnsuringFairness,
    EntityDoingCheating,
    TargetOfLoyaltyBetrayal,
    EntityBeingLoyal,
    EntityDoingBetrayal,
    JustifiedAuthority,
    JustifiedAuthorityOver,
    FailingAuthority,
    FailingAuthorityOver,
    TargetOfPurityDegradation,
    EntityPreservingPurity,
    EntityCausingDegradation,
}

impl Role {
    pub const ALL: [Role; 16] = [
        Role::TargetOfCareHarm,
        Role::EntityCausingHarm,
        Role::EntityProvidingCare,
        Role::TargetOfFairnessCheating,
        Role::EntityEnsuringFairness,
        Role::EntityDoingCheating,
        Role::TargetOfLoyaltyBetrayal,
        Role::EntityBeingLoyal,
        Role::EntityDoingBetrayal,
        Role::JustifiedAuthority,
        Role::JustifiedAuthorityOver,
        Role::FailingAuthority,
        Role::FailingAuthorityOver,
        Role::TargetOfPurityDegradation,
        Role::EntityPreservingPurity,
        Role::EntityCausingDegradation,
    ];

    pub fn foundation(self) -> Foundation {
        use Role::*;
        match self {
            TargetOfCareHarm | EntityCausingHarm | EntityProvidingCare => Foundation::CareHarm,
            TargetOfFairnessCheating | EntityEnsuringFairness | EntityDoingCheating => {
                Foundation::FairnessCheating
            }
            TargetOfLoyaltyBetrayal | EntityBeingLoyal | EntityDoingBetrayal => {
                Foundation::LoyaltyBetrayal
            }
            JustifiedAuthority | JustifiedAuthorityOver | FailingAuthority
            | FailingAuthorityOver => Foundation::AuthoritySubversion,
            TargetOfPurityDegradation | EntityPreservingPurity | EntityCausingDegradation => {
                Foundation::PurityDegradation
            }
        }
    }

    /// Negative for the five roles that receive negative sentiment, positive
    /// for everything else (including "Failing authority over").
    pub fn polarity(self) -> Polarity {
        use Role::*;
        match self {
            EntityCausingHarm | EntityDoingCheating | EntityDoingBetrayal | FailingAuthority
            | EntityCausingDegradation => Polarity::Negative,
            _ => Polarity::Positive,
        }
    }
}

impl Label for Role {
    fn canonical(&self) -> &'static str {
        use Role::*;
        match self {
            TargetOfCareHarm => "Target of care/harm",
            EntityCausingHarm => "Entity causing harm",
            EntityProvidingCare => "Entity providing care",
            TargetOfFairnessCheating => "Target of fairness/cheating",
            EntityEnsuringFairness => "Entity ensuring fairness",
            EntityDoingCheating => "Entity doing cheating",
            TargetOfLoyaltyBetrayal => "Target of loyalty/betrayal",
            EntityBeingLoyal => "Entity being loyal",
            EntityDoingBetrayal => "Entity doing betrayal",
            JustifiedAuthority => "Justified authority",
            JustifiedAuthorityOver => "Justified authority over",
            FailingAuthority => "Failing authority",
            FailingAuthorityOver => "Failing authority over",
            TargetOfPurityDegradation => "Target of purity/degradation",
            EntityPreservingPurity => "Entity preserving purity",
            EntityCausingDegradation => "Entity causing degradation",
        }
    }

    fn aliases(&self) -> &'static [&'static str] {
        use Role::*;
        match self {
            TargetOfCareHarm => &["Entity target of care/harm"],
            EntityDoingCheating => &["Entity violating fairness"],
            EntityCausingDegradation => &["Entity doing degradation"],
            _ => &[],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Polarity {
    Positive,
    Negative,
}

impl Polarity {
    pub const ALL: [Polarity; 2] = [Polarity::Positive, Polarity::Negative];
}

impl Label for Polarity {
    fn canonical(&self) -> &'static str {
        match self {
            Polarity::Positive => "positive",
            Polarity::Negative => "negative",
        }
    }
}

/// Answer space of a one-vs-all prompt: the probed foundation or "Other".
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum OneVsAll {
    Present(Foundation),
    Other,
}

impl Label for OneVsAll {
    fn canonical(&self) -> &'static str {
        match self {
            OneVsAll::Present(f) => f.canonical(),
            OneVsAll::Other => "Other",
        }
    }

    fn aliases(&self) -> &'static [&'static str] {
        match self {
            OneVsAll::Present(f) => f.aliases(),
            OneVsAll::Other => &[],
        }
    }
}

macro_rules! label_string_impls {
    ($ty:ty, $all:expr, $kind:literal) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.canonical())
            }
        }

        impl FromStr for $ty {
            type Err = DomainError;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                lookup(&$all, s).ok_or_else(|| DomainError::UnknownLabel {
                    kind: $kind,
                    value: s.to_string(),
                })
            }
        }

        impl Serialize for $ty {
            fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
                serializer.serialize_str(self.canonical())
            }
        }

        impl<'de> Deserialize<'de> for $ty {
            fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
                let s = String::deserialize(deserializer)?;
                s.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

label_string_impls!(Foundation, Foundation::ALL, "foundation");
label_string_impls!(Role, Role::ALL, "role");
label_string_impls!(Polarity, Polarity::ALL, "polarity");

/// Free-function spellings of the taxonomy mappings.
pub fn roles_of(foundation: Foundation) -> &'static [Role] {
    foundation.roles()
}

pub fn foundation_of(role: Role) -> Foundation {
    role.foundation()
}

pub fn role_polarity(role: Role) -> Polarity {
    role.polarity()
}

pub fn negative_role_of(foundation: Foundation) -> Role {
    foundation.negative_role()
}

/// Either kind of taxonomy label, as it appears in a catalog file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AnyLabel {
    Foundation(Foundation),
    Role(Role),
}

impl FromStr for AnyLabel {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Ok(f) = s.parse::<Foundation>() {
            return Ok(AnyLabel::Foundation(f));
        }
        s.parse::<Role>()
            .map(AnyLabel::Role)
            .map_err(|_| DomainError::UnknownLabel {
                kind: "foundation or role",
                value: s.to_string(),
            })
    }
}

const DEFAULT_CATALOG: &str = include_str!("../data/definitions.jsonl");

#[derive(Debug, Deserialize, Serialize)]
struct CatalogRecord {
    label: String,
    definition: String,
}

/// Definition texts for every foundation and role, rendered into prompts as
/// labelling guidelines.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DefinitionCatalog {
    foundations: BTreeMap<Foundation, String>,
    roles: BTreeMap<Role, String>,
}

impl DefinitionCatalog {
    /// The bundled catalog: foundation texts from the morality-frames
    /// taxonomy table, hand-written role descriptions.
    pub fn bundled() -> Self {
        Self::parse(DEFAULT_CATALOG).expect("bundled definition catalog is valid")
    }

    pub fn load(path: &Path) -> Result<Self, DomainError> {
        let raw = std::fs::read_to_string(path).map_err(|source| DomainError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&raw)
    }

    pub fn parse(raw: &str) -> Result<Self, DomainError> {
        let mut foundations = BTreeMap::new();
        let mut roles = BTreeMap::new();
        for (idx, line) in raw.lines().enumerate() {
            let line_no = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            let record: CatalogRecord =
                serde_json::from_str(line).map_err(|e| DomainError::MalformedCatalog {
                    line: line_no,
                    message: e.to_string(),
                })?;
            let definition = record.definition.trim().to_string();
            if definition.is_empty() {
                return Err(DomainError::MalformedCatalog {
                    line: line_no,
                    message: format!("empty definition for `{}`", record.label),
                });
            }
            let duplicate = match record.label.parse::<AnyLabel>()? {
                AnyLabel::Foundation(f) => foundations.insert(f, definition).is_some(),
                AnyLabel::Role(r) => roles.insert(r, definition).is_some(),
            };
            if duplicate {
                return Err(DomainError::MalformedCatalog {
                    line: line_no,
                    message: format!("duplicate definition for `{}`", record.label),
                });
            }
        }
        let missing: Vec<String> = Foundation::ALL
            .iter()
            .filter(|f| !foundations.contains_key(f))
            .map(|f| f.to_string())
            .chain(
                Role::ALL
                    .iter()
                    .filter(|r| !roles.contains_key(r))
                    .map(|r| r.to_string()),
            )
            .collect();
        if !missing.is_empty() {
            return Err(DomainError::IncompleteCatalog { missing });
        }
        Ok(Self { foundations, roles })
    }

    pub fn foundation(&self, f: Foundation) -> &str {
        &self.foundations[&f]
    }

    pub fn role(&self, r: Role) -> &str {
        &self.roles[&r]
    }

    /// Serialize back to the line-delimited record format.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        let records = self
            .foundations
            .iter()
            .map(|(f, d)| (f.to_string(), d))
            .chain(self.roles.iter().map(|(r, d)| (r.to_string(), d)));
        for (label, definition) in records {
            let rec = CatalogRecord {
                label,
                definition: definition.clone(),
            };
            out.push_str(&serde_json::to_string(&rec).expect("record serializes"));
            out.push('\n');
        }
        out
    }
}

impl Default for DefinitionCatalog {
    fn default() -> Self {
        Self::bundled()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn care_harm_roles_in_taxonomy_order() {
        assert_eq!(
            roles_of(Foundation::CareHarm),
            &[
                Role::TargetOfCareHarm,
                Role::EntityCausingHarm,
                Role::EntityProvidingCare
            ]
        );
        assert_eq!(roles_of(Foundation::AuthoritySubversion).len(), 4);
    }

    #[test]
    fn roles_partition_the_role_set() {
        let mut seen = BTreeSet::new();
        let counts: Vec<usize> = Foundation::ALL.iter().map(|f| f.roles().len()).collect();
        assert_eq!(counts, vec![3, 3, 3, 4, 3]);
        for f in Foundation::ALL {
            for &r in f.roles() {
                assert_eq!(foundation_of(r), f);
                assert!(seen.insert(r), "{r} listed twice");
            }
        }
        assert_eq!(seen.len(), 16);
        for r in Role::ALL {
            assert!(roles_of(foundation_of(r)).contains(&r));
        }
    }

    #[test]
    fn exactly_one_negative_role_per_foundation() {
        let positives: Vec<usize> = Foundation::ALL
            .iter()
            .map(|f| f.positive_roles().len())
            .collect();
        assert_eq!(positives, vec![2, 2, 2, 3, 2]);
        for f in Foundation::ALL {
            let negatives: Vec<Role> = f
                .roles()
                .iter()
                .copied()
                .filter(|r| r.polarity() == Polarity::Negative)
                .collect();
            assert_eq!(negatives, vec![negative_role_of(f)]);
            assert_eq!(role_polarity(negative_role_of(f)), Polarity::Negative);
        }
        assert_eq!(negative_role_of(Foundation::CareHarm), Role::EntityCausingHarm);
        assert_eq!(
            negative_role_of(Foundation::AuthoritySubversion),
            Role::FailingAuthority
        );
    }

    #[test]
    fn failing_authority_over_is_positive() {
        assert_eq!(Role::FailingAuthority.polarity(), Polarity::Negative);
        assert_eq!(Role::FailingAuthorityOver.polarity(), Polarity::Positive);
    }

    #[test]
    fn aliases_resolve_to_canonical_roles() {
        assert_eq!(
            "entity doing degradation".parse::<Role>().unwrap(),
            Role::EntityCausingDegradation
        );
        assert_eq!(
            "Entity violating fairness".parse::<Role>().unwrap(),
            Role::EntityDoingCheating
        );
        assert_eq!(
            "CARE/HARM".parse::<Foundation>().unwrap(),
            Foundation::CareHarm
        );
        assert!("Liberty/Oppression".parse::<Foundation>().is_err());
    }

    #[test]
    fn serde_uses_canonical_strings() {
        let json = serde_json::to_string(&Role::JustifiedAuthorityOver).unwrap();
        assert_eq!(json, "\"Justified authority over\"");
        let back: Role = serde_json::from_str(&json).unwrap();
        assert_eq!(back, Role::JustifiedAuthorityOver);
    }

    #[test]
    fn bundled_catalog_is_complete() {
        let catalog = DefinitionCatalog::bundled();
        for f in Foundation::ALL {
            assert!(!catalog.foundation(f).is_empty());
        }
        for r in Role::ALL {
            assert!(!catalog.role(r).is_empty());
        }
        assert!(catalog
            .foundation(Foundation::CareHarm)
            .starts_with("Care for others, generosity, compassion"));
        assert_eq!(DefinitionCatalog::parse(&catalog.to_jsonl()).unwrap(), catalog);
    }

    #[test]
    fn catalog_rejects_missing_and_unknown_labels() {
        let err = DefinitionCatalog::parse(r#"{"label":"Care/Harm","definition":"x"}"#)
            .unwrap_err();
        assert!(matches!(err, DomainError::IncompleteCatalog { ref missing } if missing.len() == 20));

        let err = DefinitionCatalog::parse(r#"{"label":"Sanctity","definition":"x"}"#)
            .unwrap_err();
        assert!(matches!(err, DomainError::UnknownLabel { .. }));

        let err = DefinitionCatalog::parse("{not json").unwrap_err();
        assert!(matches!(err, DomainError::MalformedCatalog { line: 1, .. }));
    }
}

//! Per-department non-PGI pseudo-appellations.
//!
//! Non-PGI surface is absent from the by-appellation statistics. Each
//! department with non-PGI surface gets one synthetic appellation carrying that
//! surface, authorized in exactly the counties of the department.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::model::{AppellationRecord, AuthorizationMask, Category, Color, CountyRecord};

pub const PSEUDO_WEIGHT: f64 = 0.25;

/// Code of the pseudo-appellation of a department. Ends in a letter so the
/// default code truncation keeps it whole.
pub fn pseudo_code(department: &str) -> String {
    format!("NPGI{department}X")
}

#[derive(Debug, Clone, PartialEq)]
pub enum PseudoWarning {
    /// Surface given for a department without any county in the county table.
    NoCounties { department: String, surface: f64 },
    /// Negative or non-finite surface.
    InvalidSurface { department: String, surface: f64 },
    /// The generated code already names an existing appellation.
    CodeCollision { department: String, code: String },
}

#[derive(Debug, Clone)]
pub struct PseudoInjection {
    pub appellations: Vec<AppellationRecord>,
    pub mask: AuthorizationMask,
    pub added: Vec<String>,
    pub warnings: Vec<PseudoWarning>,
}

pub fn inject_pseudo_appellations(
    appellations: &[AppellationRecord],
    counties: &[CountyRecord],
    mask: &AuthorizationMask,
    non_pgi_surface_by_department: &BTreeMap<String, f64>,
) -> PseudoInjection {
    let mut out_apps = appellations.to_vec();
    let mut out_mask = mask.clone();
    let mut added = Vec::new();
    let mut warnings = Vec::new();

    let mut by_department: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for c in counties {
        by_department
            .entry(c.department.as_str())
            .or_default()
            .push(c.insee_code.as_str());
    }

    for (department, &surface) in non_pgi_surface_by_department {
        if !surface.is_finite() || surface < 0.0 {
            warnings.push(PseudoWarning::InvalidSurface {
                department: department.clone(),
                surface,
            });
            continue;
        }
        if surface == 0.0 {
            continue;
        }
        let Some(members) = by_department.get(department.as_str()) else {
            warnings.push(PseudoWarning::NoCounties {
                department: department.clone(),
                surface,
            });
            continue;
        };
        let code = pseudo_code(department);
        if out_apps.iter().any(|a| a.code == code) {
            warnings.push(PseudoWarning::CodeCollision {
                department: department.clone(),
                code,
            });
            continue;
        }
        let record = AppellationRecord::new(
            code.clone(),
            format!("Non-PGI {department}"),
            Category::PseudoNonPgi,
            Color::Unknown,
            surface,
        )
        .expect("surface validated above");
        out_apps.push(record);
        for insee in members {
            out_mask.insert(code.clone(), *insee);
        }
        out_mask.set_weight(code.clone(), PSEUDO_WEIGHT);
        added.push(code);
    }

    PseudoInjection {
        appellations: out_apps,
        mask: out_mask,
        added,
        warnings,
    }
}

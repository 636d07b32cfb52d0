pub mod credible;
pub mod diagnose;
pub mod graphon;
pub mod newton;
pub mod ogd;
pub mod resample;
pub mod simulate;

use predbayes_core::{AtomicMixture, BaseMeasure, Predictive};

use crate::context::CliResult;

/// JSON record of a predictive distribution for metadata files: full label
/// table for finite predictives, atom/diffuse decomposition for mixtures.
pub fn describe_predictive(p: &Predictive) -> CliResult<serde_json::Value> {
    Ok(match p {
        Predictive::Finite(d) => serde_json::json!({
            "kind": "finite",
            "labels": d.labels().iter().map(|l| l.describe()).collect::<Vec<_>>(),
            "probs": d.probs(),
        }),
        Predictive::Mixture(m) => describe_mixture(m),
    })
}

const ATOM_CAP: usize = 200;

fn describe_mixture(m: &AtomicMixture) -> serde_json::Value {
    let atoms: Vec<serde_json::Value> = m
        .atoms()
        .iter()
        .take(ATOM_CAP)
        .map(|(p, w)| serde_json::json!({"point": p.describe(), "mass": w}))
        .collect();
    serde_json::json!({
        "kind": "mixture",
        "atom_count": m.atoms().len(),
        "atoms": atoms,
        "atoms_truncated": m.atoms().len() > ATOM_CAP,
        "diffuse_weight": m.diffuse_weight(),
        "base": describe_base(m.base()),
    })
}

fn describe_base(b: &BaseMeasure) -> String {
    match b {
        BaseMeasure::None => "none".to_string(),
        BaseMeasure::Uniform { lo, hi } => format!("uniform:{lo:?},{hi:?}"),
        BaseMeasure::Gaussian { mean, sd } => format!("gaussian:{mean:?},{sd:?}"),
        BaseMeasure::Categorical(d) => format!("categorical({} labels)", d.len()),
        BaseMeasure::Tags => "tags".to_string(),
        BaseMeasure::GaussianMixture { means, .. } => {
            format!("gaussian-mixture({} components)", means.len())
        }
    }
}

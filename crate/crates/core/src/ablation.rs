//! Curriculum configurations for the ablation experiments.

use serde::{Deserialize, Serialize};

use crate::curriculum::{assemble, Corpora, CurriculumConfig};
use crate::domain::Domain;
use crate::error::Result;
use crate::phrasing::TaskKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    /// FS x FC x DT grid, negations off.
    TaskGrid,
    /// FS+DT with and without extra decision templates, against FS+FC+DT.
    EqualData,
    /// One decision-template attribute fold at a time, with and without
    /// negation interpretations.
    AttributeFolds,
}

impl std::str::FromStr for Experiment {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "task-grid" => Ok(Experiment::TaskGrid),
            "equal-data" => Ok(Experiment::EqualData),
            "attribute-folds" => Ok(Experiment::AttributeFolds),
            other => Err(crate::error::Error::Config(format!(
                "unknown experiment `{other}` (task-grid, equal-data, attribute-folds)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationRow {
    pub id: String,
    /// `None` evaluates the backend without fine-tuning.
    pub config: Option<CurriculumConfig>,
}

impl AblationRow {
    pub fn label(&self) -> String {
        self.config.as_ref().map_or_else(|| "no fine-tune".to_string(), CurriculumConfig::label)
    }
}

/// The eight (FS, FC, DT) rows in table order: NNN, YNN, NYN, NNY, YYN,
/// YNY, NYY, YYY. Row 1 has no curriculum.
pub fn task_grid(seed: u64) -> Vec<AblationRow> {
    const ROWS: [(bool, bool, bool); 8] = [
        (false, false, false),
        (true, false, false),
        (false, true, false),
        (false, false, true),
        (true, true, false),
        (true, false, true),
        (false, true, true),
        (true, true, true),
    ];
    ROWS.iter()
        .enumerate()
        .map(|(i, &(fs, fc, dt))| AblationRow {
            id: format!("task-grid/{}", i + 1),
            config: (fs || fc || dt).then(|| CurriculumConfig::new(fs, fc, dt, false, seed)),
        })
        .collect()
}

/// FS+DT, FS+DT with decision templates sampled up to the FC+DT token mass
/// of the full configuration, and FS+FC+DT. The last two have equal token
/// totals up to one example.
pub fn equal_data(corpora: &Corpora, seed: u64) -> Result<Vec<AblationRow>> {
    let full = CurriculumConfig::new(true, true, true, false, seed);
    let assembled = assemble(&full, corpora)?;
    let budget = assembled.tokens(TaskKind::FactualComparison) + assembled.tokens(TaskKind::DecisionTemplate);
    let mut upsampled = CurriculumConfig::new(true, false, true, false, seed);
    upsampled.dt_upsample_to_tokens = Some(budget);
    Ok(vec![
        AblationRow { id: "equal-data/1".into(), config: Some(CurriculumConfig::new(true, false, true, false, seed)) },
        AblationRow { id: "equal-data/2".into(), config: Some(upsampled) },
        AblationRow { id: "equal-data/3".into(), config: Some(full) },
    ])
}

/// FS+FC plus one attribute's decision templates, without then with
/// negation interpretations; the last attribute's fold comes first.
pub fn attribute_folds(domain: &Domain, seed: u64) -> Vec<AblationRow> {
    let mut rows = Vec::new();
    for attr in domain.attributes.iter().rev() {
        for neg in [false, true] {
            let mut c = CurriculumConfig::new(true, true, true, neg, seed);
            c.dt_attribute_filter = Some(attr.name.clone());
            rows.push(AblationRow { id: format!("attribute-folds/{}", rows.len() + 1), config: Some(c) });
        }
    }
    rows
}

pub fn rows(experiment: Experiment, domain: &Domain, corpora: &Corpora, seed: u64) -> Result<Vec<AblationRow>> {
    Ok(match experiment {
        Experiment::TaskGrid => task_grid(seed),
        Experiment::EqualData => equal_data(corpora, seed)?,
        Experiment::AttributeFolds => attribute_folds(domain, seed),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic;

    #[test]
    fn task_grid_pattern() {
        let rows = task_grid(1);
        assert_eq!(rows.len(), 8);
        assert!(rows[0].config.is_none());
        let pattern: Vec<String> = rows
            .iter()
            .map(|r| match &r.config {
                None => "NNN".to_string(),
                Some(c) => [c.include_fs, c.include_fc, c.include_dt]
                    .iter()
                    .map(|&b| if b { 'Y' } else { 'N' })
                    .collect(),
            })
            .collect();
        assert_eq!(pattern, ["NNN", "YNN", "NYN", "NNY", "YYN", "YNY", "NYY", "YYY"]);
        assert!(rows.iter().flat_map(|r| &r.config).all(|c| !c.include_neg));
    }

    #[test]
    fn folds_cover_each_attribute_with_and_without_negations() {
        let d = synthetic::cities(5, 1);
        let rows = attribute_folds(&d, 3);
        assert_eq!(rows.len(), 4);
        let summary: Vec<(String, bool)> = rows
            .iter()
            .map(|r| {
                let c = r.config.as_ref().unwrap();
                (c.dt_attribute_filter.clone().unwrap(), c.include_neg)
            })
            .collect();
        assert_eq!(
            summary,
            [
                ("population".to_string(), false),
                ("population".to_string(), true),
                ("temperature".to_string(), false),
                ("temperature".to_string(), true)
            ]
        );
    }
}

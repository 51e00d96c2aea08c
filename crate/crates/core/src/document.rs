//! Versioned JSON document holding every fitted model of a run.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gpr::{GprDocument, GprModel};
use crate::harness::FittedModels;
use crate::mimo::{CombinerDocument, CombinerWeights, MimoForecaster};
use crate::mlp::{MlpDocument, MlpForecaster};
use crate::timeseries::{SplitSpec, YearMonth};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MimoGprDocument {
    pub members: Vec<GprDocument>,
    pub combiner: CombinerDocument,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MimoMlpDocument {
    pub h: usize,
    pub members: Vec<MlpDocument>,
    pub combiner: CombinerDocument,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub format_version: u32,
    pub seed: u64,
    pub lags: usize,
    pub split: SplitSpec,
    pub start_month: YearMonth,
    pub series_names: Vec<String>,
    pub fit_through: usize,
    pub gpr: Option<MimoGprDocument>,
    #[serde(default)]
    pub mlp: Vec<MimoMlpDocument>,
}

fn combiner_doc(c: &Option<CombinerWeights>) -> Result<CombinerDocument> {
    c.as_ref()
        .map(|c| c.to_document())
        .ok_or_else(|| Error::Document("fitted forecaster has no combiner".into()))
}

impl ModelDocument {
    pub fn new(
        models: &FittedModels,
        seed: u64,
        lags: usize,
        split: SplitSpec,
        start_month: YearMonth,
        series_names: Vec<String>,
    ) -> Result<Self> {
        let gpr = match &models.gpr {
            Some(f) => Some(MimoGprDocument {
                members: f.members.iter().map(GprModel::to_document).collect(),
                combiner: combiner_doc(&f.combiner)?,
            }),
            None => None,
        };
        let mlp = models
            .mlp
            .iter()
            .map(|(h, f)| {
                Ok(MimoMlpDocument {
                    h: *h,
                    members: f.members.iter().map(MlpForecaster::to_document).collect(),
                    combiner: combiner_doc(&f.combiner)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            format_version: FORMAT_VERSION,
            seed,
            lags,
            split,
            start_month,
            series_names,
            fit_through: models.fit_through,
            gpr,
            mlp,
        })
    }

    pub fn to_models(&self) -> Result<FittedModels> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Document(format!(
                "unsupported format version {} (expected {FORMAT_VERSION})",
                self.format_version
            )));
        }
        let m = self.series_names.len();
        let check = |n: usize, what: &str| {
            if n != m {
                return Err(Error::Document(format!("{what} has {n} members for {m} series")));
            }
            Ok(())
        };
        let gpr = match &self.gpr {
            Some(d) => {
                check(d.members.len(), "GPR block")?;
                let members = d.members.iter().map(GprModel::from_document).collect::<Result<Vec<_>>>()?;
                Some(MimoForecaster::new(members, Some(CombinerWeights::from_document(&d.combiner)?))?)
            }
            None => None,
        };
        let mlp = self
            .mlp
            .iter()
            .map(|d| {
                check(d.members.len(), "MLP block")?;
                let members = d.members.iter().map(MlpForecaster::from_document).collect::<Result<Vec<_>>>()?;
                Ok((d.h, MimoForecaster::new(members, Some(CombinerWeights::from_document(&d.combiner)?))?))
            })
            .collect::<Result<Vec<_>>>()?;
        let fitted = FittedModels { gpr, mlp, fit_through: self.fit_through };
        let lags_ok = fitted.gpr.iter().map(|f| f.lags()).chain(fitted.mlp.iter().map(|(_, f)| f.lags())).all(|p| p == self.lags);
        if !lags_ok {
            return Err(Error::Document(format!("member lag orders disagree with lags = {}", self.lags)));
        }
        Ok(fitted)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("document serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Document(e.to_string()))
    }
}

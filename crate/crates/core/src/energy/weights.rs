use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the chromaticity regularizer of the base color refinement is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChromaRegularizer {
    /// Penalize only the part of `Δb_k` orthogonal to `b_k`.
    Projected,
    /// Penalize `Δb_k` itself.
    Printed,
}

/// Term weights of the decomposition and refinement energies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyWeights {
    pub data: f64,
    pub clustering: f64,
    pub r_sparsity: f64,
    /// Exponent of the reflectance gradient-sparsity norm.
    pub p: f64,
    pub r_consistency: f64,
    pub monochrome: f64,
    pub i_sparsity: f64,
    pub smoothness: f64,
    pub non_neg: f64,
    pub intensity_reg: f64,
    pub chroma_reg: f64,
    pub eps_nonneg: f64,
    /// IRLS weights are capped at `1 / eps_irls`.
    pub eps_irls: f64,
    pub chroma_mode: ChromaRegularizer,
    /// Refined base colors also move the clustered reflectance of their pixels.
    #[serde(default = "default_true")]
    pub refine_clustering: bool,
}

fn default_true() -> bool {
    true
}

impl Default for EnergyWeights {
    fn default() -> Self {
        EnergyWeights {
            data: 5000.0,
            clustering: 200.0,
            r_sparsity: 20.0,
            p: 1.0,
            r_consistency: 10.0,
            monochrome: 10.0,
            i_sparsity: 3.0,
            smoothness: 3.0,
            non_neg: 1000.0,
            intensity_reg: 10.0,
            chroma_reg: 100.0,
            eps_nonneg: 0.002,
            eps_irls: 1e-3,
            chroma_mode: ChromaRegularizer::Projected,
            refine_clustering: true,
        }
    }
}

impl EnergyWeights {
    pub fn validate(&self) -> Result<()> {
        let lambdas = [
            ("lambda_data", self.data),
            ("lambda_clustering", self.clustering),
            ("lambda_r_sparsity", self.r_sparsity),
            ("lambda_r_consistency", self.r_consistency),
            ("lambda_monochrome", self.monochrome),
            ("lambda_i_sparsity", self.i_sparsity),
            ("lambda_smoothness", self.smoothness),
            ("lambda_non_neg", self.non_neg),
            ("lambda_ir", self.intensity_reg),
            ("lambda_cr", self.chroma_reg),
        ];
        for (name, v) in lambdas {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be a finite value >= 0, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.p) {
            return Err(Error::Config(format!("p must lie in [0, 1], got {}", self.p)));
        }
        if !(self.eps_nonneg > 0.0 && self.eps_irls > 0.0) {
            return Err(Error::Config("epsilons must be positive".into()));
        }
        Ok(())
    }

    /// Applies one `key = value` override. Returns `Ok(false)` when the key is
    /// not an energy key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        let num = || -> Result<f64> {
            value
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("{key}: expected a number, got {value:?}")))
        };
        let slot = match key {
            "lambda_data" => &mut self.data,
            "lambda_clustering" => &mut self.clustering,
            "lambda_r_sparsity" => &mut self.r_sparsity,
            "p" => &mut self.p,
            "lambda_r_consistency" => &mut self.r_consistency,
            "lambda_monochrome" => &mut self.monochrome,
            "lambda_i_sparsity" => &mut self.i_sparsity,
            "lambda_smoothness" => &mut self.smoothness,
            "lambda_non_neg" => &mut self.non_neg,
            "lambda_ir" => &mut self.intensity_reg,
            "lambda_cr" => &mut self.chroma_reg,
            "eps_nonneg" => &mut self.eps_nonneg,
            "eps_irls" => &mut self.eps_irls,
            "refine_clustering" => {
                self.refine_clustering = value
                    .parse()
                    .map_err(|_| Error::Config(format!("{key}: expected true or false, got {value:?}")))?;
                return Ok(true);
            }
            "chroma_regularizer" => {
                self.chroma_mode = match value {
                    "projected" => ChromaRegularizer::Projected,
                    "printed" => ChromaRegularizer::Printed,
                    other => {
                        return Err(Error::Config(format!(
                            "chroma_regularizer must be projected or printed, got {other:?}"
                        )))
                    }
                };
                return Ok(true);
            }
            _ => return Ok(false),
        };
        *slot = num()?;
        Ok(true)
    }
}

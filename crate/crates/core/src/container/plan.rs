//! Compression plans: which model pipeline codes each field.

use crate::adaptive::AdaptiveParams;
use crate::binner::nested::NestedScheme;
use crate::binner::CutCriterion;
use crate::error::{invalid, Result};
use crate::seqio::DEFAULT_QUALITY_MAX;

#[derive(Debug, Clone, PartialEq)]
pub enum ModelPlan {
    /// Full order-`l` context model.
    Order(usize),
    /// Order-`l` contexts grouped by a cut of the merge tree.
    Binned { order: usize, cut: CutCriterion },
    Nested {
        scheme: NestedScheme,
        target_order: usize,
        budgets: Vec<usize>,
    },
    /// Hierarchically binned window packed into one transition table.
    Hcb { budgets: Vec<usize> },
    /// Soft model optimized then determinized into a transition table.
    SoftHscm { states: usize, steps: usize, seed: u64 },
    Adaptive {
        order: usize,
        rate: u32,
        update_period: u32,
    },
}

impl ModelPlan {
    /// Plans whose model is a count-table context model (the only ones that can be clustered).
    pub fn is_context_model(&self) -> bool {
        matches!(self, ModelPlan::Order(_) | ModelPlan::Binned { .. } | ModelPlan::Nested { .. })
    }

    pub fn adaptive_params(&self) -> Option<(usize, AdaptiveParams)> {
        match *self {
            ModelPlan::Adaptive {
                order,
                rate,
                update_period,
            } => Some((
                order,
                AdaptiveParams {
                    rate,
                    update_period,
                    ..AdaptiveParams::default()
                },
            )),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectorCoding {
    /// Uniform table over `k` centroids.
    Flat,
    /// Static table from the assignment frequencies, stored in the header.
    Entropy,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterPlan {
    pub k: usize,
    pub max_iter: usize,
    pub seed: u64,
    pub selector: SelectorCoding,
}

impl ClusterPlan {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            max_iter: crate::cluster::DEFAULT_MAX_ITER,
            seed: 0,
            selector: SelectorCoding::Entropy,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldPlan {
    pub model: ModelPlan,
    pub cluster: Option<ClusterPlan>,
}

impl FieldPlan {
    pub fn new(model: ModelPlan) -> Self {
        Self { model, cluster: None }
    }

    pub fn clustered(model: ModelPlan, cluster: ClusterPlan) -> Self {
        Self {
            model,
            cluster: Some(cluster),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(c) = &self.cluster {
            if c.k == 0 {
                return Err(invalid("cluster count k must be at least 1"));
            }
            if !self.model.is_context_model() {
                return Err(invalid("clustering applies only to order, binned and nested plans"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StreamPlans {
    /// Bases and (for FASTQ) qualities as separate streams.
    Separate {
        bases: FieldPlan,
        qualities: Option<FieldPlan>,
    },
    /// One stream over `quality * 4 + base`.
    Packed { max_score: u16, plan: FieldPlan },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompressionPlan {
    pub name: String,
    pub streams: StreamPlans,
}

/// Names accepted by [`CompressionPlan::preset`].
pub const PRESETS: &[&str] = &[
    "default",
    "order0",
    "order1",
    "order2",
    "order1-binned",
    "binned",
    "nested",
    "nested-asym",
    "nested-hier",
    "hcb",
    "hscm",
    "adaptive",
    "packed",
];

impl CompressionPlan {
    /// Bases: binned order 3 at 0.01 bpv penalty. Qualities: symmetric nested order 4
    /// with budgets `[64, 256]`, clustered into 4 models.
    pub fn default_plan(has_qualities: bool) -> Self {
        Self {
            name: "default".into(),
            streams: StreamPlans::Separate {
                bases: FieldPlan::new(ModelPlan::Binned {
                    order: 3,
                    cut: CutCriterion::MaxPenalty(0.01),
                }),
                qualities: has_qualities.then(|| {
                    FieldPlan::clustered(
                        ModelPlan::Nested {
                            scheme: NestedScheme::Symmetric,
                            target_order: 4,
                            budgets: vec![64, 256],
                        },
                        ClusterPlan::new(4),
                    )
                }),
            },
        }
    }

    /// The same model for both fields.
    pub fn uniform(name: &str, model: ModelPlan, has_qualities: bool) -> Self {
        Self {
            name: name.into(),
            streams: StreamPlans::Separate {
                bases: FieldPlan::new(model.clone()),
                qualities: has_qualities.then(|| FieldPlan::new(model)),
            },
        }
    }

    pub fn preset(name: &str, has_qualities: bool) -> Result<Self> {
        let model = match name {
            "default" => return Ok(Self::default_plan(has_qualities)),
            "order0" => ModelPlan::Order(0),
            "order1" => ModelPlan::Order(1),
            "order2" => ModelPlan::Order(2),
            "order1-binned" => ModelPlan::Binned {
                order: 1,
                cut: CutCriterion::MaxPenalty(0.01),
            },
            "binned" => ModelPlan::Binned {
                order: 2,
                cut: CutCriterion::MaxPenalty(0.01),
            },
            "nested" => ModelPlan::Nested {
                scheme: NestedScheme::Symmetric,
                target_order: 4,
                budgets: vec![64, 256],
            },
            "nested-asym" => ModelPlan::Nested {
                scheme: NestedScheme::Asymmetric,
                target_order: 4,
                budgets: vec![64, 8],
            },
            "nested-hier" => ModelPlan::Nested {
                scheme: NestedScheme::Hierarchical,
                target_order: 4,
                budgets: vec![16, 8],
            },
            "hcb" => ModelPlan::Hcb { budgets: vec![16, 8, 4] },
            "hscm" => ModelPlan::SoftHscm {
                states: 4,
                steps: 20,
                seed: 0,
            },
            "adaptive" => ModelPlan::Adaptive {
                order: 1,
                rate: 4,
                update_period: 16,
            },
            "packed" => {
                if !has_qualities {
                    return Err(invalid("the packed plan needs quality scores"));
                }
                return Ok(Self {
                    name: name.into(),
                    streams: StreamPlans::Packed {
                        max_score: DEFAULT_QUALITY_MAX,
                        plan: FieldPlan::new(ModelPlan::Adaptive {
                            order: 1,
                            rate: 4,
                            update_period: 16,
                        }),
                    },
                });
            }
            other => {
                return Err(invalid(format!(
                    "unknown plan {other:?}; expected one of {}",
                    PRESETS.join(", ")
                )))
            }
        };
        Ok(Self::uniform(name, model, has_qualities))
    }

    pub fn validate(&self) -> Result<()> {
        match &self.streams {
            StreamPlans::Separate { bases, qualities } => {
                bases.validate()?;
                if let Some(q) = qualities {
                    q.validate()?;
                }
            }
            StreamPlans::Packed { plan, .. } => plan.validate()?,
        }
        Ok(())
    }
}

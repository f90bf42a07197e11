use serde::Serialize;

use crate::tensor::{Scalar, Tape};

use super::{Batch, Forward};

/// One attribute group of one sample.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GroupTrace {
    pub attribute: u32,
    /// History positions covered by the group.
    pub positions: Vec<usize>,
    /// Weight among the sibling groups under the same parent.
    pub weight: f64,
    pub cluster: Vec<f64>,
    /// Index of the enclosing group one level up.
    pub parent: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LevelTrace {
    pub key: String,
    pub groups: Vec<GroupTrace>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DimensionTrace {
    pub name: String,
    /// Per history position, the weight inside its lowest-level group.
    pub position_weights: Vec<f64>,
    /// Bottom-up.
    pub levels: Vec<LevelTrace>,
    pub overall: Vec<f64>,
}

impl DimensionTrace {
    /// Weight of each group relative to the whole history: the product of
    /// the group's weight and those of its ancestors.
    pub fn absolute_weights(&self) -> Vec<Vec<f64>> {
        let mut out: Vec<Vec<f64>> = vec![Vec::new(); self.levels.len()];
        for j in (0..self.levels.len()).rev() {
            out[j] = self.levels[j]
                .groups
                .iter()
                .map(|g| match g.parent {
                    Some(p) => g.weight * out[j + 1][p],
                    None => g.weight,
                })
                .collect();
        }
        out
    }
}

/// Intermediate quantities of one sample's forward pass.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ForwardTrace {
    pub dimensions: Vec<DimensionTrace>,
    /// Per history position: the i_x pooling weights (GRU-state weights for
    /// dhan_gru, raw attention for din). Empty for mean-pooling models.
    pub item_weights: Vec<f64>,
    pub item_feature: Vec<f64>,
    pub features: Vec<f64>,
    pub p: f64,
}

fn rows<F: Scalar>(tape: &Tape<F>, v: crate::tensor::Var) -> (Vec<f64>, usize) {
    let t = tape.value(v);
    (t.to_f64_vec(), t.cols())
}

impl Forward {
    /// Per-sample traces read back from the tape.
    pub fn traces<F: Scalar>(&self, tape: &Tape<F>, batch: &Batch) -> Vec<ForwardTrace> {
        let t = batch.t;
        let (p, _) = rows(tape, self.p);
        let (feat, fw) = rows(tape, self.features);
        let item_w = self.item_weights.map(|v| rows(tape, v).0);
        let item_f = self.item_feature.map(|v| rows(tape, v));
        let dims: Vec<_> = self
            .dimensions
            .iter()
            .map(|d| {
                (
                    rows(tape, d.position_weights).0,
                    d.group_weights.iter().map(|&v| rows(tape, v).0).collect::<Vec<_>>(),
                    d.clusters.iter().map(|&v| rows(tape, v)).collect::<Vec<_>>(),
                    rows(tape, d.overall),
                )
            })
            .collect();

        (0..batch.size)
            .map(|b| {
                let len = batch.lengths[b];
                let dimensions = dims
                    .iter()
                    .zip(&batch.dimensions)
                    .map(|((pw, gw, cl, (x, xd)), layout)| {
                        let levels = layout
                            .levels
                            .iter()
                            .enumerate()
                            .map(|(j, lvl)| {
                                let (c, cd) = &cl[j];
                                let groups = (0..lvl.sample.len())
                                    .filter(|&g| lvl.sample[g] == b)
                                    .map(|g| GroupTrace {
                                        attribute: lvl.attribute[g],
                                        positions: lvl.positions[g].clone(),
                                        weight: gw[j][g],
                                        cluster: c[g * cd..(g + 1) * cd].to_vec(),
                                        parent: layout
                                            .levels
                                            .get(j + 1)
                                            .and_then(|up| up.members.ids()[g])
                                            .map(|pg| layout.levels[j + 1].local[pg]),
                                    })
                                    .collect();
                                LevelTrace {
                                    key: lvl.key.clone(),
                                    groups,
                                }
                            })
                            .collect();
                        DimensionTrace {
                            name: layout.name.clone(),
                            position_weights: pw[b * t..b * t + len].to_vec(),
                            levels,
                            overall: x[b * xd..(b + 1) * xd].to_vec(),
                        }
                    })
                    .collect();
                ForwardTrace {
                    dimensions,
                    item_weights: item_w.as_ref().map_or(Vec::new(), |w| w[b * t..b * t + len].to_vec()),
                    item_feature: item_f
                        .as_ref()
                        .map_or(Vec::new(), |(v, d)| v[b * d..(b + 1) * d].to_vec()),
                    features: feat[b * fw..(b + 1) * fw].to_vec(),
                    p: p[b],
                }
            })
            .collect()
    }
}

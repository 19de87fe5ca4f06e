use serde::{Deserialize, Serialize};

use super::model::ReidModel;

/// Parameter and multiply-add counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cost {
    pub params: u64,
    pub macs: u64,
}

impl std::ops::Add for Cost {
    type Output = Cost;
    fn add(self, o: Cost) -> Cost {
        Cost {
            params: self.params + o.params,
            macs: self.macs + o.macs,
        }
    }
}

/// Dense grouped convolution: `c_out · (c_in / g) · k²` weights, each used
/// once per output position.
pub fn conv_cost(c_in: usize, c_out: usize, kernel: usize, groups: usize, h_out: usize, w_out: usize) -> Cost {
    let params = (c_out * (c_in / groups) * kernel * kernel) as u64;
    Cost {
        params,
        macs: params * (h_out * w_out) as u64,
    }
}

/// Counts live weights only: masked connections cost nothing. Batch-norm
/// affine parameters count as parameters but not as multiply-adds, since
/// they fold into the neighbouring convolution at deployment.
pub fn count_params_flops(model: &ReidModel) -> Cost {
    let cfg = &model.config;
    let mut side = cfg.input_size;
    let stem = &model.stem;
    let mut total = conv_cost(stem.in_channels, stem.out_channels, 3, 1, side, side);
    for (i, stage) in model.stages.iter().enumerate() {
        if i > 0 {
            side /= 2;
        }
        let hw = (side * side) as u64;
        for layer in stage {
            let live = layer.lgc.live_weights() as u64;
            let c = &layer.conv;
            total = total
                + Cost {
                    params: 2 * (layer.bn1.channels + layer.bn2.channels) as u64 + live,
                    macs: live * hw,
                }
                + conv_cost(c.in_channels, c.out_channels, 3, c.groups, side, side);
        }
    }
    let head = &model.head;
    let linear = (head.in_features * head.out_features) as u64;
    total
        + Cost {
            params: 2 * model.head_bn.channels as u64 + linear + head.out_features as u64,
            macs: linear,
        }
}

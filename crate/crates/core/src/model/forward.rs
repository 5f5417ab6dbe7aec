use super::attention::{
    apply_mask, check_feature, combine_masks, fuse, predict_params, render_mask, GaussianNodes,
};
use super::{linear, Bound, LgaConfig, ModelError, ParamGroup, Result, Variant};
use crate::numerics::{NodeId, Tape, Tensor};

#[derive(Clone, Debug)]
pub struct AttentionOutputs {
    pub params: GaussianNodes,
    /// One `H x W` mask per Gaussian.
    pub masks: Vec<NodeId>,
    /// Combined `H x W` mask.
    pub mask: NodeId,
    /// `C x H x W` highlighted feature.
    pub masked: NodeId,
}

#[derive(Clone, Debug)]
pub struct ForwardResult {
    /// Absent for [`Variant::Baseline`].
    pub attention: Option<AttentionOutputs>,
    /// `C x H x W`; equal to the input node for the baseline.
    pub fused: NodeId,
    /// `[1, classes]`.
    pub main_logits: NodeId,
    /// `[1, classes]`, from the masked feature only.
    pub aux_logits: Option<NodeId>,
    /// `[4]`.
    pub box_pred: NodeId,
}

pub fn forward(
    bound: &Bound,
    tape: &mut Tape,
    x: NodeId,
    variant: Variant,
) -> Result<ForwardResult> {
    check_feature(bound, tape, x)?;
    let c = &bound.config;
    let flat = c.channels * c.cells();

    let (attention, fused, aux_logits) = match variant {
        Variant::Baseline => (None, x, None),
        Variant::Lga => {
            let params = predict_params(bound, tape, x)?;
            let masks = (0..c.masks)
                .map(|g| {
                    let (mu_y, mu_x, sigma) = params.split(tape, g)?;
                    render_mask(tape, mu_y, mu_x, sigma, c.height, c.width)
                })
                .collect::<Result<Vec<_>>>()?;
            let mask = combine_masks(tape, &masks)?;
            let masked = apply_mask(tape, x, mask)?;
            let fused = fuse(tape, x, masked)?;

            let masked_flat = tape.reshape(masked, &[1, flat])?;
            let aux = linear(
                tape,
                masked_flat,
                bound.id(ParamGroup::AuxW),
                bound.id(ParamGroup::AuxB),
            )?;
            let outputs = AttentionOutputs {
                params,
                masks,
                mask,
                masked,
            };
            (Some(outputs), fused, Some(aux))
        }
    };

    let fused_flat = tape.reshape(fused, &[1, flat])?;
    let hidden = linear(
        tape,
        fused_flat,
        bound.id(ParamGroup::HiddenW),
        bound.id(ParamGroup::HiddenB),
    )?;
    let hidden = tape.relu(hidden)?;
    let main_logits = linear(
        tape,
        hidden,
        bound.id(ParamGroup::ClassW),
        bound.id(ParamGroup::ClassB),
    )?;
    let box_pred = linear(
        tape,
        hidden,
        bound.id(ParamGroup::BoxW),
        bound.id(ParamGroup::BoxB),
    )?;
    let box_pred = tape.reshape(box_pred, &[4])?;

    Ok(ForwardResult {
        attention,
        fused,
        main_logits,
        aux_logits,
        box_pred,
    })
}

/// Loss terms of one RoI as tape nodes.
#[derive(Clone, Copy, Debug)]
pub struct LossNodes {
    pub total: NodeId,
    pub cls: NodeId,
    pub reg: NodeId,
    /// Auxiliary classification loss on the masked feature (unweighted).
    pub lga: Option<NodeId>,
}

/// Smooth-L1 transition point of the box loss.
pub const BOX_BETA: f64 = 1.0;

/// `CE(main) + lambda_reg * smooth_l1(box) + lambda_lga * CE(aux)`.
pub fn total_loss(
    tape: &mut Tape,
    result: &ForwardResult,
    label: usize,
    box_target: &Tensor,
    config: &LgaConfig,
) -> Result<LossNodes> {
    if box_target.shape() != [4] {
        return Err(ModelError::ShapeMismatch {
            expected: vec![4],
            actual: box_target.shape().to_vec(),
        });
    }
    let cls = tape.softmax_cross_entropy(result.main_logits, label)?;
    let reg = tape.smooth_l1(result.box_pred, box_target, BOX_BETA)?;
    let weighted = tape.scale(reg, config.lambda_reg)?;
    let mut total = tape.add(cls, weighted)?;
    let lga = match result.aux_logits {
        Some(aux) => {
            let l = tape.softmax_cross_entropy(aux, label)?;
            let weighted = tape.scale(l, config.lambda_lga)?;
            total = tape.add(total, weighted)?;
            Some(l)
        }
        None => None,
    };
    Ok(LossNodes {
        total,
        cls,
        reg,
        lga,
    })
}

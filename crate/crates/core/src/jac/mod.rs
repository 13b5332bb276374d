//! The joint ad/creative CTR model: an ad tower, a creative tower that
//! reads the ad tower's CTR through a quantized codebook bridge, joint
//! training, and the split into independently served halves.

mod bridge;
mod checkpoint;
mod features;
mod gradcheck;
mod model;
mod quantizer;
mod serving;
mod towers;
mod two_tower;

pub use bridge::{Bridge, BridgeBackward, BridgeCache, BridgeMode};
pub use checkpoint::{
    checkpoint_kind, read_checkpoint, restore_blocks, write_checkpoint, BlockInfo, Checkpoint,
    CheckpointHeader, TowerRecipe, MAGIC, VERSION,
};
pub use features::{
    ad_id_feature, ar_input, cr_fields, cr_fields_for_profile, tt_item_fields, tt_user_fields,
    two_tower_fields, ArInput, AR_CREATIVE_FIELDS, AR_FIELDS, CR_FIELDS,
};
pub use gradcheck::{small_jac_config, JacGradProbe};
pub use model::{
    train_on_log, ArModel, ArModelConfig, CrModel, CrModelConfig, CurvePoint, Example, JacConfig,
    JacForward, JacGrads, JacModel, StepLoss, Trainable, TrainConfig, TrainingCurve,
};
pub use quantizer::{calibrate_r, information_gain, quantize_pctr, QuantizerConfig};
pub use serving::{split_for_serving, ArPlus, CrPlus, CrRanker, HistoricalCtr, GLOBAL_PRIOR_CTR};
pub use towers::{
    ArCache, ArConfig, ArGrads, ArTower, BridgeConfig, CrCache, CrConfig, CrGrads, CrTower,
};
pub use two_tower::{cosine, TtExample, TwoTower, TwoTowerConfig, TwoTowerRanker};

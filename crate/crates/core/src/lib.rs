//! Desk-scale laboratory for extracting fine-tuning data from diffusion
//! models.
//!
//! The pieces, bottom to top:
//!
//! - [`schedule`]: discrete noise schedules and the forward corruption.
//! - [`oracle`]: Gaussian-mixture ground truth with closed-form scores,
//!   wrapped as an analytic denoiser.
//! - [`mlp`], [`train`], [`checkpoint`]: a small learned denoiser, its
//!   training loops (full and low-rank fine-tuning), and on-disk state.
//! - [`guidance`], [`sampler`]: sampling-time combinations of a pretrained
//!   and a fine-tuned model, including FineXtract extrapolation, driven by
//!   a counter-based noise source so runs are reproducible bit for bit.
//! - [`extraction`], [`metrics`]: clique-based clustering of guided
//!   samples and similarity scoring against fine-tuning data.
//! - [`caption`]: recovery of training captions from weight deltas.

pub mod caption;
pub mod checkpoint;
pub mod denoiser;
pub mod error;
pub mod extraction;
pub mod guidance;
pub mod loss;
pub mod metrics;
pub mod mlp;
pub mod oracle;
pub mod rng;
pub mod sampler;
pub mod schedule;
pub mod train;
pub mod vocab;

pub use caption::{
    build_objective, export_layer_pair, hard_prompt_extract, principal_direction,
    project_to_vocab, rowspace_argmax_single, ExtractionObjective, HardPromptResult,
    LinearLayerPair, ObjectiveVariant, PromptEmbedding,
};
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use denoiser::{Denoiser, SampleBatch};
pub use error::{CoreError, Result};
pub use extraction::{
    build_graph, clique_centroid, enumerate_maximal_cliques, extract, threshold_clustering,
    CliqueBudget, CliqueSet, ClusteringConfig, ExtractionResult, SimilarityGraph,
};
pub use guidance::{
    cfg_eps, finextract_eps, make_guided_denoiser, model_guidance_eps, GuidanceConfig,
    GuidanceMode, GuidedDenoiser,
};
pub use loss::{diffusion_loss, TrainItem};
pub use metrics::{a_esr, average_similarity, metric_report, raw_cosine, MetricReport, SimilarityFn};
pub use mlp::{ArchSpec, MLPDenoiser, Params};
pub use oracle::{geometric_interpolate, noised_score, AnalyticDenoiser, GaussianMixture};
pub use sampler::ancestral_sample;
pub use schedule::{eps_to_score, forward_noise, score_to_eps, NoiseSchedule};
pub use train::{
    default_finetune_steps, finetune_full, finetune_lora, pretrain, LowRankAdapter, OptimizerKind,
    TrainConfig,
};
pub use vocab::{TokenVocabulary, VocabSpec, MAX_CAPTION_LEN};

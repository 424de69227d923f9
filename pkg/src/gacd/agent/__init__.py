from .losses import (
    adjacency_auc,
    adjacency_target,
    decode_graph,
    fit_latent_sdot,
    loss_m1_m2,
    pretrain_m3,
    transport_terms,
    vgae_recon_loss,
)
from .policy import (
    ActResult,
    DEPLOY_IDX,
    KIND_ORDER,
    N_KINDS,
    PolicyConfig,
    PolicyForward,
    act,
    build_policy,
    encode,
    evaluate_actions,
    kind_distribution,
    latent_codes_of,
    noise_coords,
    policy_forward,
)
from .ppo import RolloutBatch, RolloutBuffer, gae_advantages, ppo_loss


"""Graph memory network for node classification on heterophilous graphs."""

from ._hpgmn import (
    Dataset,
    Graph,
    HpgmnError,
    SplitSet,
    attend,
    dataset_stats,
    edge_homophily,
    entropy_loss,
    generate_heterophilous_sbm,
    kpattern_loss,
    label_wise_class_distribution,
    label_wise_feature_distribution,
    load_config,
    load_dataset,
    local_statistics,
    node_homophily,
    ppr_diffusion,
    random_splits,
    run_ablate,
    run_sweep,
    run_train,
    save_dataset,
    train_split,
)

__all__ = [name for name in dir() if not name.startswith("_")]

"""Graph autoencoder for fields on unstructured meshes.

Submodules are imported lazily so that the command-line entry point can pin
thread counts before numpy is first loaded.
"""
import importlib

__version__ = "0.1.0"

_EXPORTS = {
    "Tensor": "autograd",
    "backward": "autograd",
    "no_grad": "autograd",
    "ParamStore": "nn",
    "MlpSpec": "nn",
    "mlp_apply": "nn",
    "adam_update": "nn",
    "Graph": "graph",
    "MeshInput": "graph",
    "build_input_graph": "graph",
    "bind_snapshot": "graph",
    "batch_graphs": "graph",
    "voxel_cluster": "coarsen",
    "MmpSpec": "mp",
    "mp_layer": "mp",
    "mmp_layer": "mp",
    "ReductionPlan": "pool",
    "topk_pool": "pool",
    "unpool": "pool",
    "masked_field": "pool",
    "ModelConfig": "model",
    "GraphAutoencoder": "model",
    "SnapshotSet": "data",
    "Standardizer": "data",
    "generate_synthetic": "data",
    "load_snapshots": "data",
    "standardize": "data",
    "split_train_val": "data",
    "TrainConfig": "train",
    "fit": "train",
    "mse_loss": "train",
    "evaluate_rmse": "train",
}

__all__ = sorted(_EXPORTS)


def __getattr__(name):
    mod = _EXPORTS.get(name)
    if mod is None:
        raise AttributeError(f"module 'meshgae' has no attribute {name!r}")
    return getattr(importlib.import_module(f".{mod}", __name__), name)

"""A small laboratory for object-permanence localization experiments.

Modules:
    scene_sim: scripted 3D scenes and box projection.
    annotator: frame labels and slot observations.
    dataset_io: seeded dataset generation and JSONL persistence.
    autodiff: reverse-mode differentiation, LSTM primitives and Adam.
    models: OPNet, its ablations and programmed baselines.
    train_eval: losses, training, metrics and reports.
    cli: the ``oplab`` command line.
"""
__version__ = "0.1.0"

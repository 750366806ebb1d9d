"""Hierarchical matrices with directly compressed block products."""

from .clustering import (BlockClusterTree, ClusterTree, admissible,
                         build_block_cluster_tree, build_cluster_tree,
                         dump_tree, product_rank_constant, sparsity_constant)
from .compressors import (CompressorKind, CountingMap, DenseMap, LinearMap,
                          aca, bilanczos, compress, dense_svd_compress,
                          randomized_adaptive, randomized_fixed,
                          stop_criterion)
from .geometry import (PanelSet, assemble_dense, build_sphere_mesh,
                       kernel_block, kernel_entry)
from .hmatrix import (HBlock, HMatrix, OpCounter, assemble_hmatrix,
                      frobenius_norm, hmat_vec, hmat_vec_transpose,
                      identity_hmatrix, load_hmatrix, matvec_op_bound,
                      save_hmatrix, to_dense)
from .lowrank import (EpsRank, FixedRank, LowRank, fast_truncate_sum,
                      lowrank_svd, truncate, zero_lowrank)
from .multiply import (MultiplyConfig, estimate_product_error,
                       hierarchical_approximation, hmult_new,
                       hmult_traditional)
from .sumexpr import (SumExpression, evaluate_dense, restrict, sumexpr_apply,
                      sumexpr_apply_transpose, sumexpr_root)

__version__ = "0.1.0"

"""Compatibility measures and reconstruction tools for eroded-boundary jigsaw puzzles."""

from .cm import (CMMatrix, EdgeEmbeddings, all_pairs_cm, e2e_all_pairs,
                 extract_embeddings, extract_ensemble_embeddings, normalize_rows,
                 oracle_cm, symmetrize)
from .classical import classical_all_pairs, l1_cm, mgc_cm, pbc_cm, ssd_cm
from .distances import distance
from .model import (E2EModel, TenLarge, TwinPair, e2e_score, embed_left,
                    embed_right, ensemble_cm, load_checkpoint, save_checkpoint)
from .puzzle import (CROPPED, ZERO_FRAME, Piece, Puzzle, erode_piece, erode_puzzle,
                     rotate_piece, scramble, tile_image)
from .solver import (Assembly, greedy_reconstruct, neighbor_accuracy,
                     render_assembly, top1_accuracy)
from .train import TrainConfig, sample_triplets, train_e2e, train_ten, train_ten_large, triplet_loss

__version__ = "0.1.0"

from .bovw import BovwNorm, DescriptorCache, assign_words, bovw_embed
from .edges import edge_detect, to_gray
from .kmeans import Codebook, kmeans_fit
from .sift import DESCRIPTOR_DIM, Descriptor, descriptor_matrix, extract_descriptors

__all__ = [
    "BovwNorm",
    "Codebook",
    "DESCRIPTOR_DIM",
    "Descriptor",
    "DescriptorCache",
    "assign_words",
    "bovw_embed",
    "descriptor_matrix",
    "edge_detect",
    "extract_descriptors",
    "kmeans_fit",
    "to_gray",
]

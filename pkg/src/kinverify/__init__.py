"""Audio-visual kinship verification toolkit.

Library and CLI for verifying kin relations (father-son, father-daughter,
mother-son, mother-daughter) from facial video frames and voice recordings:
hand-crafted texture descriptors, classical speaker models (GMM-UBM,
i-vectors), Siamese-trained embeddings, three fusion strategies, and a
family-disjoint cross-validated EER/ROC evaluation protocol. A synthetic
kin-structured corpus generator makes the whole pipeline runnable end to
end without any external data.
"""

__version__ = "0.1.0"

//! Bi-directional attention pointer network with an answerable classifier.

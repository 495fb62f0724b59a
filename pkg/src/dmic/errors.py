"""Exception hierarchy. Every error carries a stable machine-readable ``code``."""


class DmicError(ValueError):
    code = "DmicError"

    def __str__(self):
        msg = super().__str__()
        return f"{self.code}: {msg}" if msg else self.code


def _make(name, doc):
    return type(name, (DmicError,), {"code": name, "__doc__": doc})


# features-io
BadMagic = _make("BadMagic", "File header does not carry the expected magic bytes.")
Truncated = _make("Truncated", "Payload shorter than the header declares.")
TrailingData = _make("TrailingData", "Payload longer than the header declares.")
NonFinite = _make("NonFinite", "NaN or infinite entries.")
SizeOverflow = _make("SizeOverflow", "Declared element count does not fit the format.")
EmptyMatrix = _make("EmptyMatrix", "Matrix with zero rows.")
BadDimension = _make("BadDimension", "Feature dimension below 2.")
ZeroRow = _make("ZeroRow", "All-zero row cannot be normalized.")
NotNormalized = _make("NotNormalized", "Rows are expected to have unit norm.")
MetaError = _make("MetaError", "Malformed or inconsistent sample metadata.")
ShapeMismatch = _make("ShapeMismatch", "Array shapes do not agree.")

# rerank
KTooLarge = _make("KTooLarge", "Neighbourhood size exceeds the sample count.")
K2ExceedsK1 = _make("K2ExceedsK1", "Expansion size k2 larger than k1.")
EmptyScope = _make("EmptyScope", "No samples in the requested modality scope.")

# scheduling / clustering
ConfigError = _make("ConfigError", "Invalid configuration value.")
EpochOutOfRange = _make("EpochOutOfRange", "Epoch index outside the phase length.")
BadEps = _make("BadEps", "DBSCAN radius must be positive.")
MissingInterK2 = _make("MissingInterK2", "Joint clustering needs an inter-phase plan.")

# hmcl / embedder
NoClusters = _make("NoClusters", "No non-outlier cluster to build memories from.")
InsufficientClusters = _make("InsufficientClusters", "Fewer clusters than identities per batch.")
ScopeMismatch = _make("ScopeMismatch", "Batch labels do not match the memory bank.")
ZeroEmbedding = _make("ZeroEmbedding", "Linear map sends an input row to zero.")
NonFiniteGradient = _make("NonFiniteGradient", "Gradient contains NaN or infinity.")
TrainingDiverged = _make("TrainingDiverged", "Non-finite loss during training.")

# metrics
EmptyEvaluation = _make("EmptyEvaluation", "No query has a relevant gallery item.")
LengthMismatch = _make("LengthMismatch", "Label vectors differ in length.")
EmptyLog = _make("EmptyLog", "Training log has no rows.")

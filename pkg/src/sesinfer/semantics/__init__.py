"""Word embeddings, spectral topics and per-user topic usage."""
from .skipgram import (
    EmbeddingMatrix,
    SkipGramConfig,
    Vocabulary,
    build_vocabulary,
    read_embeddings,
    sgns_pair_loss_and_grad,
    train_skipgram,
    write_embeddings,
)
from .spectral import (
    TopicModel,
    check_similarity,
    normalized_laplacian,
    read_topic_labels,
    read_topic_model,
    similarity_matrix,
    spectral_cluster,
    write_topic_model,
)
from .topics import (
    TopicCorrelation,
    TopicIncomeGap,
    read_distributions,
    topic_correlation,
    topic_distributions,
    topic_income_discrimination,
    user_topic_distribution,
    write_distributions,
)

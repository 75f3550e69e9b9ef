"""Train embeddings on a planted corpus and check the spectral topics recover it."""
import numpy as np
from sklearn.metrics import adjusted_rand_score

from sesinfer.corpus import GeoTweet, UserTimeline
from sesinfer.semantics import (SkipGramConfig, build_vocabulary, similarity_matrix, spectral_cluster,
                              train_skipgram)

rng = np.random.default_rng(1)
K, per = 4, 12
stems = ["sol", "mar", "ven", "boi"]
topics = [[stem + chr(97 + i) * 2 for i in range(per)] for stem in stems]
# each user tweets about a single topic
timelines = {}
for u in range(300):
    words = topics[rng.integers(K)]
    tweets = [GeoTweet(f"u{u}", float(t), " ".join(rng.choice(words, 8))) for t in range(10)]
    timelines[f"u{u}"] = UserTimeline(f"u{u}", tweets)

vocab = build_vocabulary(timelines)
E = train_skipgram(timelines, vocab, SkipGramConfig(dim=20, epochs=5, seed=0))
print("loss per epoch:", np.round(E.epoch_loss, 4))

M = similarity_matrix(E.vectors, E.words)
model = spectral_cluster(M, K, seed=0, words=E.words)
truth = [stems.index(w[:3]) for w in E.words]
print("sizes:", model.sizes().tolist())
print("ARI vs planted topics:", adjusted_rand_score(truth, model.topics))

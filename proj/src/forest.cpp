#include "cnpr/forest.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

#include "cnpr/errors.hpp"
#include "cnpr/rng.hpp"

namespace cnpr {

namespace {

struct TreeBuilder {
    const std::vector<double>& X;
    std::size_t d;
    const std::vector<int>& y;
    int n_classes;
    int max_depth;
    int min_split;
    int mtry;
    RngStream rng;
    std::vector<RandomForestClassifier*> unused{}; // keeps aggregate-init simple

    double value(std::size_t row, std::size_t col) const { return X[row * d + col]; }

    int majority(std::span<const std::size_t> idx) const {
        std::vector<int> counts(static_cast<std::size_t>(n_classes), 0);
        for (std::size_t i : idx) counts[static_cast<std::size_t>(y[i])]++;
        int best = 0;
        for (int c = 1; c < n_classes; ++c)
            if (counts[static_cast<std::size_t>(c)] > counts[static_cast<std::size_t>(best)])
                best = c;
        return best;
    }

    bool pure(std::span<const std::size_t> idx) const {
        for (std::size_t i = 1; i < idx.size(); ++i)
            if (y[idx[i]] != y[idx[0]]) return false;
        return true;
    }

    static double gini_from_counts(const std::vector<int>& counts, double n) {
        double s = 0;
        for (int c : counts) {
            double p = c / n;
            s += p * p;
        }
        return 1.0 - s;
    }
};

} // namespace

void RandomForestClassifier::fit(const std::vector<double>& X, std::size_t n_rows,
                                 std::size_t n_features, const std::vector<int>& y, int n_classes,
                                 const ForestConfig& cfg) {
    if (n_rows == 0 || n_features == 0) throw ValidationError("forest fit needs non-empty data");
    if (y.size() != n_rows) throw ValidationError("label count does not match rows");
    if (n_classes < 2) throw ValidationError("forest needs at least 2 classes");
    n_features_ = n_features;
    n_classes_ = n_classes;
    trees_.assign(static_cast<std::size_t>(cfg.n_trees), Tree{});

    const int mtry = cfg.mtry > 0 ? cfg.mtry
                                  : std::max(1, static_cast<int>(std::floor(
                                                    std::sqrt(static_cast<double>(n_features)))));

    auto build_tree = [&](std::size_t tree_idx) {
        TreeBuilder tb{X,           n_features,
                       y,           n_classes,
                       cfg.max_depth, cfg.min_samples_split,
                       mtry,        RngStream(derive_seed(cfg.seed, tree_idx))};
        Tree& tree = trees_[tree_idx];

        // Bootstrap sample.
        std::vector<std::size_t> root(n_rows);
        for (std::size_t i = 0; i < n_rows; ++i) root[i] = tb.rng.uniform_index(n_rows);

        struct Work {
            std::vector<std::size_t> idx;
            int depth;
            int node;
        };
        tree.nodes.push_back(Node{});
        std::vector<Work> stack;
        stack.push_back(Work{std::move(root), 0, 0});
        std::vector<std::size_t> feats(n_features);
        for (std::size_t f = 0; f < n_features; ++f) feats[f] = f;

        while (!stack.empty()) {
            Work w = std::move(stack.back());
            stack.pop_back();
            Node& node = tree.nodes[static_cast<std::size_t>(w.node)];

            if (w.depth >= tb.max_depth || static_cast<int>(w.idx.size()) < tb.min_split ||
                tb.pure(w.idx)) {
                node.feature = -1;
                node.leaf_class = tb.majority(w.idx);
                continue;
            }

            // Candidate features for this node.
            for (int i = 0; i < tb.mtry; ++i) {
                std::size_t j = static_cast<std::size_t>(i) +
                                tb.rng.uniform_index(n_features - static_cast<std::size_t>(i));
                std::swap(feats[static_cast<std::size_t>(i)], feats[j]);
            }

            double best_score = 1e300;
            int best_feat = -1;
            double best_thr = 0;
            std::vector<std::size_t> sorted = w.idx;
            std::vector<int> left_counts(static_cast<std::size_t>(tb.n_classes));
            std::vector<int> right_counts(static_cast<std::size_t>(tb.n_classes));
            const double n_total = static_cast<double>(w.idx.size());

            for (int fi = 0; fi < tb.mtry; ++fi) {
                const std::size_t f = feats[static_cast<std::size_t>(fi)];
                std::sort(sorted.begin(), sorted.end(), [&](std::size_t a, std::size_t b) {
                    return tb.value(a, f) < tb.value(b, f);
                });
                std::fill(left_counts.begin(), left_counts.end(), 0);
                std::fill(right_counts.begin(), right_counts.end(), 0);
                for (std::size_t i : sorted) right_counts[static_cast<std::size_t>(y[i])]++;

                for (std::size_t i = 0; i + 1 < sorted.size(); ++i) {
                    int cls = y[sorted[i]];
                    left_counts[static_cast<std::size_t>(cls)]++;
                    right_counts[static_cast<std::size_t>(cls)]--;
                    double va = tb.value(sorted[i], f);
                    double vb = tb.value(sorted[i + 1], f);
                    if (va == vb) continue;
                    double nl = static_cast<double>(i + 1);
                    double nr = n_total - nl;
                    double score = nl / n_total * TreeBuilder::gini_from_counts(left_counts, nl) +
                                   nr / n_total * TreeBuilder::gini_from_counts(right_counts, nr);
                    if (score < best_score) {
                        best_score = score;
                        best_feat = static_cast<int>(f);
                        best_thr = 0.5 * (va + vb);
                    }
                }
            }

            double parent = 0;
            {
                std::vector<int> counts(static_cast<std::size_t>(tb.n_classes), 0);
                for (std::size_t i : w.idx) counts[static_cast<std::size_t>(y[i])]++;
                parent = TreeBuilder::gini_from_counts(counts, n_total);
            }
            if (best_feat < 0 || best_score >= parent - 1e-12) {
                node.feature = -1;
                node.leaf_class = tb.majority(w.idx);
                continue;
            }

            std::vector<std::size_t> left, right;
            for (std::size_t i : w.idx)
                (tb.value(i, static_cast<std::size_t>(best_feat)) <= best_thr ? left : right)
                    .push_back(i);

            // push_back may reallocate, so write through indices only.
            const int left_id = static_cast<int>(tree.nodes.size());
            tree.nodes.push_back(Node{});
            const int right_id = static_cast<int>(tree.nodes.size());
            tree.nodes.push_back(Node{});
            Node& parent_node = tree.nodes[static_cast<std::size_t>(w.node)];
            parent_node.feature = best_feat;
            parent_node.threshold = best_thr;
            parent_node.left = left_id;
            parent_node.right = right_id;
            stack.push_back(Work{std::move(right), w.depth + 1, right_id});
            stack.push_back(Work{std::move(left), w.depth + 1, left_id});
        }
    };

    const int n_threads = std::max(1, cfg.threads);
    if (n_threads == 1) {
        for (std::size_t t = 0; t < trees_.size(); ++t) build_tree(t);
    } else {
        std::vector<std::thread> pool;
        std::size_t per = (trees_.size() + static_cast<std::size_t>(n_threads) - 1) /
                          static_cast<std::size_t>(n_threads);
        for (int w = 0; w < n_threads; ++w) {
            std::size_t lo = static_cast<std::size_t>(w) * per;
            std::size_t hi = std::min(trees_.size(), lo + per);
            if (lo >= hi) break;
            pool.emplace_back([&, lo, hi] {
                for (std::size_t t = lo; t < hi; ++t) build_tree(t);
            });
        }
        for (auto& th : pool) th.join();
    }
}

int RandomForestClassifier::predict_tree(const Tree& tree, std::span<const double> row) const {
    int node = 0;
    while (tree.nodes[static_cast<std::size_t>(node)].feature >= 0) {
        const Node& n = tree.nodes[static_cast<std::size_t>(node)];
        node = row[static_cast<std::size_t>(n.feature)] <= n.threshold ? n.left : n.right;
    }
    return tree.nodes[static_cast<std::size_t>(node)].leaf_class;
}

int RandomForestClassifier::predict(std::span<const double> row) const {
    if (row.size() != n_features_) throw ValidationError("prediction row width mismatch");
    std::vector<int> votes(static_cast<std::size_t>(n_classes_), 0);
    for (const Tree& t : trees_) votes[static_cast<std::size_t>(predict_tree(t, row))]++;
    int best = 0;
    for (int c = 1; c < n_classes_; ++c)
        if (votes[static_cast<std::size_t>(c)] > votes[static_cast<std::size_t>(best)]) best = c;
    return best;
}

double RandomForestClassifier::accuracy(const std::vector<double>& X, std::size_t n_rows,
                                        const std::vector<int>& y) const {
    std::size_t ok = 0;
    for (std::size_t i = 0; i < n_rows; ++i) {
        std::span<const double> row(&X[i * n_features_], n_features_);
        if (predict(row) == y[i]) ++ok;
    }
    return static_cast<double>(ok) / static_cast<double>(n_rows);
}

} // namespace cnpr

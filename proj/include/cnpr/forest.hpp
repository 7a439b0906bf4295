#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace cnpr {

struct ForestConfig {
    int n_trees = 200;
    int max_depth = 12;
    int min_samples_split = 4;
    int mtry = -1; // <= 0 resolves to floor(sqrt(n_features))
    int threads = 1;
    std::uint64_t seed = 1;
};

// CART random-forest classifier: Gini splits, bootstrap resampling, a random
// feature subset per node, majority vote over trees (ties to the lowest
// class index). Trees are trained on independent seeded substreams, so the
// result is identical for any thread count.
class RandomForestClassifier {
  public:
    void fit(const std::vector<double>& X_row_major, std::size_t n_rows, std::size_t n_features,
             const std::vector<int>& y, int n_classes, const ForestConfig& cfg);

    int predict(std::span<const double> row) const;
    double accuracy(const std::vector<double>& X_row_major, std::size_t n_rows,
                    const std::vector<int>& y) const;

    int n_classes() const { return n_classes_; }
    std::size_t n_features() const { return n_features_; }

  private:
    struct Node {
        int feature = -1; // -1 marks a leaf
        double threshold = 0;
        int left = -1, right = -1;
        int leaf_class = 0;
    };
    struct Tree {
        std::vector<Node> nodes;
    };

    int predict_tree(const Tree& tree, std::span<const double> row) const;

    std::vector<Tree> trees_;
    std::size_t n_features_ = 0;
    int n_classes_ = 0;
};

} // namespace cnpr

#pragma once

// Uniform fit/predict interface over the four classifier families the report
// compares: random forest (200 trees, depth 16), SVM with RBF and polynomial
// kernels, a single-hidden-layer (100) neural network, and gradient-boosted
// trees with stock settings. Features are standardized (train-fold statistics
// only) for the scale-sensitive families (SVM, ANN).

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "bcsam/autoencoder.hpp"

namespace bcsam {

enum class ClassifierFamily { RF, SVM_RBF, SVM_POLY, ANN, XGB };

const char* to_string(ClassifierFamily f);
ClassifierFamily classifier_family_from_string(const std::string& s);  // throws on unknown

struct ClassifierSpec {
    ClassifierFamily family = ClassifierFamily::RF;
    nlohmann::json hyperparams;

    static ClassifierSpec make(ClassifierFamily family);
    static ClassifierSpec from_name(const std::string& name);
    bool needs_scaling() const;
};

// Unfitted model handle; hyperparameters are pinned at build time.
struct Classifier {
    ClassifierSpec spec;
    uint64_t seed = 0;
};

Classifier build_classifier(const ClassifierSpec& spec, uint64_t seed);

struct StandardScaler {
    std::vector<double> mean, std;

    static StandardScaler fit(const Eigen::MatrixXd& x);
    Eigen::MatrixXd transform(const Eigen::MatrixXd& x) const;
};

class TrainedClassifier {
public:
    struct Impl;

    const ClassifierSpec& spec() const { return spec_; }
    uint64_t seed() const { return seed_; }
    const std::vector<std::string>& classes() const { return classes_; }
    const nlohmann::json& hyperparams() const { return spec_.hyperparams; }
    bool scaled() const { return scaler_.has_value(); }

    std::vector<std::string> predict(const Eigen::MatrixXd& x) const;

    void save(const std::string& path) const;  // blob + <path>.json sidecar
    static TrainedClassifier load(const std::string& path);

private:
    friend TrainedClassifier fit(const Classifier&, const Eigen::MatrixXd&,
                                 const std::vector<std::string>&);
    ClassifierSpec spec_;
    uint64_t seed_ = 0;
    Eigen::Index dim_ = 0;
    std::vector<std::string> classes_;
    std::optional<StandardScaler> scaler_;
    std::shared_ptr<Impl> impl_;
};

// x is (n,d) with one row per sample. Throws on empty data, a single class,
// or row/label count mismatch.
TrainedClassifier fit(const Classifier& clf, const Eigen::MatrixXd& x,
                      const std::vector<std::string>& y);

// (# equal) / N; throws on length mismatch or empty input.
double accuracy(const std::vector<std::string>& predicted,
                const std::vector<std::string>& truth);

// FeatureTable rows -> (n,50) matrix + labels, in row order.
std::pair<Eigen::MatrixXd, std::vector<std::string>> features_to_xy(const FeatureTable& t);

}  // namespace bcsam

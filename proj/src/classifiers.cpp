#include "bcsam/classifiers.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <stdexcept>

#include <opencv2/core.hpp>
#include <opencv2/ml.hpp>

#include "bcsam/autograd.hpp"
#include "bcsam/nn.hpp"
#include "bcsam/rng.hpp"

using nlohmann::json;

namespace bcsam {

const char* to_string(ClassifierFamily f) {
    switch (f) {
        case ClassifierFamily::RF: return "rf";
        case ClassifierFamily::SVM_RBF: return "svm_rbf";
        case ClassifierFamily::SVM_POLY: return "svm_poly";
        case ClassifierFamily::ANN: return "ann";
        case ClassifierFamily::XGB: return "xgb";
    }
    return "?";
}

ClassifierFamily classifier_family_from_string(const std::string& s) {
    if (s == "rf") return ClassifierFamily::RF;
    if (s == "svm_rbf") return ClassifierFamily::SVM_RBF;
    if (s == "svm_poly") return ClassifierFamily::SVM_POLY;
    if (s == "ann") return ClassifierFamily::ANN;
    if (s == "xgb") return ClassifierFamily::XGB;
    throw std::invalid_argument("unknown classifier family '" + s +
                                "' (expected rf, svm_rbf, svm_poly, ann or xgb)");
}

ClassifierSpec ClassifierSpec::make(ClassifierFamily family) {
    ClassifierSpec s;
    s.family = family;
    switch (family) {
        case ClassifierFamily::RF:
            s.hyperparams = {{"n_estimators", 200}, {"max_depth", 16},
                             {"max_features", "sqrt"}, {"bootstrap", true}};
            break;
        case ClassifierFamily::SVM_RBF:
            s.hyperparams = {{"kernel", "rbf"}, {"C", 1.0}, {"gamma", "scale"}};
            break;
        case ClassifierFamily::SVM_POLY:
            s.hyperparams = {{"kernel", "poly"}, {"C", 1.0}, {"gamma", "scale"},
                             {"degree", 3}, {"coef0", 0.0}};
            break;
        case ClassifierFamily::ANN:
            s.hyperparams = {{"hidden_layers", {100}}, {"optimizer", "adam"},
                             {"learning_rate", 0.001}, {"max_iter", 200},
                             {"alpha", 0.0001}, {"batch_size", 200}};
            break;
        case ClassifierFamily::XGB:
            s.hyperparams = {{"n_rounds", 100}, {"eta", 0.3}, {"max_depth", 6},
                             {"lambda", 1.0}, {"gamma", 0.0}, {"min_child_weight", 1.0},
                             {"objective", "softmax"}};
            break;
    }
    return s;
}

ClassifierSpec ClassifierSpec::from_name(const std::string& name) {
    return make(classifier_family_from_string(name));
}

bool ClassifierSpec::needs_scaling() const {
    return family == ClassifierFamily::SVM_RBF || family == ClassifierFamily::SVM_POLY ||
           family == ClassifierFamily::ANN;
}

Classifier build_classifier(const ClassifierSpec& spec, uint64_t seed) {
    // enforce the pinned values; a spec carrying different ones is a bug
    switch (spec.family) {
        case ClassifierFamily::RF:
            if (spec.hyperparams.value("n_estimators", 0) != 200 ||
                spec.hyperparams.value("max_depth", 0) != 16)
                throw std::invalid_argument("RF spec must use 200 estimators, depth 16");
            break;
        case ClassifierFamily::ANN:
            if (spec.hyperparams.value("hidden_layers", std::vector<int>{}) !=
                std::vector<int>{100})
                throw std::invalid_argument("ANN spec must use one hidden layer of 100");
            break;
        case ClassifierFamily::SVM_RBF:
        case ClassifierFamily::SVM_POLY: {
            const std::string k = spec.hyperparams.value("kernel", "");
            if (k != "rbf" && k != "poly")
                throw std::invalid_argument("SVM kernel must be rbf or poly");
            break;
        }
        case ClassifierFamily::XGB:
            break;
    }
    return Classifier{spec, seed};
}

StandardScaler StandardScaler::fit(const Eigen::MatrixXd& x) {
    StandardScaler s;
    const auto d = x.cols();
    s.mean.resize(static_cast<size_t>(d));
    s.std.resize(static_cast<size_t>(d));
    for (Eigen::Index j = 0; j < d; ++j) {
        const double m = x.col(j).mean();
        const double var = (x.col(j).array() - m).square().mean();
        s.mean[static_cast<size_t>(j)] = m;
        s.std[static_cast<size_t>(j)] = std::sqrt(var) > 1e-12 ? std::sqrt(var) : 1.0;
    }
    return s;
}

Eigen::MatrixXd StandardScaler::transform(const Eigen::MatrixXd& x) const {
    if (static_cast<size_t>(x.cols()) != mean.size())
        throw std::invalid_argument("scaler: dimension mismatch");
    Eigen::MatrixXd out = x;
    for (Eigen::Index j = 0; j < x.cols(); ++j)
        out.col(j) = (x.col(j).array() - mean[static_cast<size_t>(j)]) /
                     std[static_cast<size_t>(j)];
    return out;
}

// ------------------------------------------------------------------ tree code

namespace {

struct TreeNode {
    int feature = -1;
    double threshold = 0;
    int left = -1, right = -1;
    double value = 0;  // class index (RF) or leaf weight (boosting)
};

using Tree = std::vector<TreeNode>;

double tree_eval(const Tree& t, const Eigen::MatrixXd& x, Eigen::Index row) {
    int node = 0;
    while (t[static_cast<size_t>(node)].feature >= 0) {
        const auto& n = t[static_cast<size_t>(node)];
        node = x(row, n.feature) <= n.threshold ? n.left : n.right;
    }
    return t[static_cast<size_t>(node)].value;
}

// CART with Gini impurity over a feature subsample per node.
struct CartBuilder {
    const Eigen::MatrixXd& x;
    const std::vector<int>& y;
    int num_classes;
    int max_depth;
    int max_features;
    Rng& rng;
    Tree tree;

    int build(std::vector<int>& idx, int depth) {
        std::vector<int64_t> counts(static_cast<size_t>(num_classes), 0);
        for (int i : idx) counts[static_cast<size_t>(y[static_cast<size_t>(i)])]++;
        const int majority = static_cast<int>(
            std::max_element(counts.begin(), counts.end()) - counts.begin());
        const auto n = static_cast<double>(idx.size());

        double parent_gini = 1.0;
        for (auto c : counts) parent_gini -= (c / n) * (c / n);

        const bool pure = *std::max_element(counts.begin(), counts.end()) ==
                          static_cast<int64_t>(idx.size());
        if (depth >= max_depth || pure || idx.size() < 2) {
            tree.push_back({-1, 0, -1, -1, static_cast<double>(majority)});
            return static_cast<int>(tree.size()) - 1;
        }

        // feature subsample without replacement
        std::vector<int> features(static_cast<size_t>(x.cols()));
        std::iota(features.begin(), features.end(), 0);
        rng.shuffle(features);
        features.resize(static_cast<size_t>(std::min<int>(max_features, static_cast<int>(x.cols()))));

        int best_f = -1;
        double best_thr = 0, best_score = parent_gini - 1e-12;
        std::vector<std::pair<double, int>> vals;
        for (int f : features) {
            vals.clear();
            for (int i : idx) vals.emplace_back(x(i, f), y[static_cast<size_t>(i)]);
            std::sort(vals.begin(), vals.end());
            std::vector<int64_t> left(static_cast<size_t>(num_classes), 0);
            std::vector<int64_t> right = counts;
            for (size_t s = 0; s + 1 < vals.size(); ++s) {
                left[static_cast<size_t>(vals[s].second)]++;
                right[static_cast<size_t>(vals[s].second)]--;
                if (vals[s].first == vals[s + 1].first) continue;
                const double nl = static_cast<double>(s + 1), nr = n - nl;
                double gl = 1.0, gr = 1.0;
                for (int c = 0; c < num_classes; ++c) {
                    gl -= (left[static_cast<size_t>(c)] / nl) * (left[static_cast<size_t>(c)] / nl);
                    gr -= (right[static_cast<size_t>(c)] / nr) * (right[static_cast<size_t>(c)] / nr);
                }
                const double score = (nl / n) * gl + (nr / n) * gr;
                if (score < best_score) {
                    best_score = score;
                    best_f = f;
                    best_thr = 0.5 * (vals[s].first + vals[s + 1].first);
                }
            }
        }
        if (best_f < 0) {
            tree.push_back({-1, 0, -1, -1, static_cast<double>(majority)});
            return static_cast<int>(tree.size()) - 1;
        }

        std::vector<int> li, ri;
        for (int i : idx)
            (x(i, best_f) <= best_thr ? li : ri).push_back(i);
        tree.push_back({best_f, best_thr, -1, -1, 0});
        const int me = static_cast<int>(tree.size()) - 1;
        const int l = build(li, depth + 1);
        const int r = build(ri, depth + 1);
        tree[static_cast<size_t>(me)].left = l;
        tree[static_cast<size_t>(me)].right = r;
        return me;
    }
};

// Second-order regression tree on (gradient, hessian) with the usual
// regularized gain and leaf weight -G/(H+lambda).
struct BoostTreeBuilder {
    const Eigen::MatrixXd& x;
    const std::vector<double>& grad;
    const std::vector<double>& hess;
    int max_depth;
    double lambda, gamma, min_child_weight;
    Tree tree;

    int build(std::vector<int>& idx, int depth) {
        double G = 0, H = 0;
        for (int i : idx) {
            G += grad[static_cast<size_t>(i)];
            H += hess[static_cast<size_t>(i)];
        }
        auto leaf = [&]() {
            tree.push_back({-1, 0, -1, -1, -G / (H + lambda)});
            return static_cast<int>(tree.size()) - 1;
        };
        if (depth >= max_depth || idx.size() < 2) return leaf();

        const double parent_score = G * G / (H + lambda);
        int best_f = -1;
        double best_thr = 0, best_gain = 0;
        std::vector<std::pair<double, int>> vals;
        for (int f = 0; f < x.cols(); ++f) {
            vals.clear();
            for (int i : idx) vals.emplace_back(x(i, f), i);
            std::sort(vals.begin(), vals.end());
            double GL = 0, HL = 0;
            for (size_t s = 0; s + 1 < vals.size(); ++s) {
                GL += grad[static_cast<size_t>(vals[s].second)];
                HL += hess[static_cast<size_t>(vals[s].second)];
                if (vals[s].first == vals[s + 1].first) continue;
                const double GR = G - GL, HR = H - HL;
                if (HL < min_child_weight || HR < min_child_weight) continue;
                const double gain = 0.5 * (GL * GL / (HL + lambda) + GR * GR / (HR + lambda) -
                                           parent_score) - gamma;
                if (gain > best_gain) {
                    best_gain = gain;
                    best_f = f;
                    best_thr = 0.5 * (vals[s].first + vals[s + 1].first);
                }
            }
        }
        if (best_f < 0) return leaf();

        std::vector<int> li, ri;
        for (int i : idx)
            (x(i, best_f) <= best_thr ? li : ri).push_back(i);
        tree.push_back({best_f, best_thr, -1, -1, 0});
        const int me = static_cast<int>(tree.size()) - 1;
        const int l = build(li, depth + 1);
        const int r = build(ri, depth + 1);
        tree[static_cast<size_t>(me)].left = l;
        tree[static_cast<size_t>(me)].right = r;
        return me;
    }
};

json tree_to_json(const Tree& t) {
    json arr = json::array();
    for (const auto& n : t) arr.push_back({n.feature, n.threshold, n.left, n.right, n.value});
    return arr;
}

Tree tree_from_json(const json& arr) {
    Tree t;
    for (const auto& n : arr)
        t.push_back({n.at(0).get<int>(), n.at(1).get<double>(), n.at(2).get<int>(),
                     n.at(3).get<int>(), n.at(4).get<double>()});
    return t;
}

}  // namespace

// ----------------------------------------------------------------- impl types

struct TrainedClassifier::Impl {
    virtual ~Impl() = default;
    virtual std::vector<int> predict_indices(const Eigen::MatrixXd& x) const = 0;
    virtual json blob() const = 0;
};

namespace {

struct ForestImpl : TrainedClassifier::Impl {
    std::vector<Tree> trees;
    int num_classes = 0;

    std::vector<int> predict_indices(const Eigen::MatrixXd& x) const override {
        std::vector<int> out(static_cast<size_t>(x.rows()));
        std::vector<int> votes(static_cast<size_t>(num_classes));
        for (Eigen::Index r = 0; r < x.rows(); ++r) {
            std::fill(votes.begin(), votes.end(), 0);
            for (const auto& t : trees) votes[static_cast<size_t>(tree_eval(t, x, r))]++;
            out[static_cast<size_t>(r)] = static_cast<int>(
                std::max_element(votes.begin(), votes.end()) - votes.begin());
        }
        return out;
    }

    json blob() const override {
        json trees_j = json::array();
        for (const auto& t : trees) trees_j.push_back(tree_to_json(t));
        return {{"kind", "rf"}, {"num_classes", num_classes}, {"trees", trees_j}};
    }
};

struct BoostImpl : TrainedClassifier::Impl {
    std::vector<std::vector<Tree>> rounds;  // [round][class]
    int num_classes = 0;
    double eta = 0.3;

    std::vector<double> margins(const Eigen::MatrixXd& x, Eigen::Index r) const {
        std::vector<double> f(static_cast<size_t>(num_classes), 0.0);
        for (const auto& round : rounds)
            for (int k = 0; k < num_classes; ++k)
                f[static_cast<size_t>(k)] += eta * tree_eval(round[static_cast<size_t>(k)], x, r);
        return f;
    }

    std::vector<int> predict_indices(const Eigen::MatrixXd& x) const override {
        std::vector<int> out(static_cast<size_t>(x.rows()));
        for (Eigen::Index r = 0; r < x.rows(); ++r) {
            const auto f = margins(x, r);
            out[static_cast<size_t>(r)] =
                static_cast<int>(std::max_element(f.begin(), f.end()) - f.begin());
        }
        return out;
    }

    json blob() const override {
        json rounds_j = json::array();
        for (const auto& round : rounds) {
            json per_class = json::array();
            for (const auto& t : round) per_class.push_back(tree_to_json(t));
            rounds_j.push_back(per_class);
        }
        return {{"kind", "xgb"}, {"num_classes", num_classes}, {"eta", eta}, {"trees", rounds_j}};
    }
};

struct MlpImpl : TrainedClassifier::Impl {
    Tensor w1, b1, w2, b2;  // (100,d), (100), (K,100), (K)

    std::vector<int> predict_indices(const Eigen::MatrixXd& x) const override {
        const auto n = x.rows(), d = x.cols();
        const auto hidden = w1.dim(0), k = w2.dim(0);
        std::vector<int> out(static_cast<size_t>(n));
        Eigen::VectorXd h(hidden), z(k);
        for (Eigen::Index r = 0; r < n; ++r) {
            for (Eigen::Index j = 0; j < hidden; ++j) {
                double s = b1[j];
                for (Eigen::Index c = 0; c < d; ++c) s += w1[j * d + c] * x(r, c);
                h(j) = std::max(0.0, s);
            }
            for (Eigen::Index j = 0; j < k; ++j) {
                double s = b2[j];
                for (Eigen::Index c = 0; c < hidden; ++c) s += w2[j * hidden + c] * h(c);
                z(j) = s;
            }
            Eigen::Index arg;
            z.maxCoeff(&arg);
            out[static_cast<size_t>(r)] = static_cast<int>(arg);
        }
        return out;
    }

    json blob() const override {
        auto dump = [](const Tensor& t) {
            return json{{"shape", t.shape()},
                        {"data", std::vector<double>(t.data(), t.data() + t.numel())}};
        };
        return {{"kind", "ann"}, {"w1", dump(w1)}, {"b1", dump(b1)}, {"w2", dump(w2)},
                {"b2", dump(b2)}};
    }
};

struct SvmImpl : TrainedClassifier::Impl {
    cv::Ptr<cv::ml::SVM> svm;

    std::vector<int> predict_indices(const Eigen::MatrixXd& x) const override {
        cv::Mat xf(static_cast<int>(x.rows()), static_cast<int>(x.cols()), CV_32F);
        for (int r = 0; r < xf.rows; ++r)
            for (int c = 0; c < xf.cols; ++c) xf.at<float>(r, c) = static_cast<float>(x(r, c));
        cv::Mat out;
        svm->predict(xf, out);
        std::vector<int> res(static_cast<size_t>(xf.rows));
        for (int r = 0; r < xf.rows; ++r)
            res[static_cast<size_t>(r)] = static_cast<int>(std::lround(out.at<float>(r, 0)));
        return res;
    }

    json blob() const override {
        // mirror Algorithm::save so loadFromString finds a named map node
        cv::FileStorage fs("model.yml", cv::FileStorage::WRITE | cv::FileStorage::MEMORY);
        fs << svm->getDefaultName() << "{";
        svm->write(fs);
        fs << "}";
        return {{"kind", "svm"}, {"opencv_yaml", fs.releaseAndGetString()}};
    }
};

Tensor tensor_from_json(const json& j) {
    return Tensor::from(j.at("shape").get<Shape>(), j.at("data").get<std::vector<double>>());
}

std::shared_ptr<TrainedClassifier::Impl> blob_to_impl(const json& blob) {
    const std::string kind = blob.at("kind").get<std::string>();
    if (kind == "rf") {
        auto impl = std::make_shared<ForestImpl>();
        impl->num_classes = blob.at("num_classes").get<int>();
        for (const auto& t : blob.at("trees")) impl->trees.push_back(tree_from_json(t));
        return impl;
    }
    if (kind == "xgb") {
        auto impl = std::make_shared<BoostImpl>();
        impl->num_classes = blob.at("num_classes").get<int>();
        impl->eta = blob.at("eta").get<double>();
        for (const auto& round : blob.at("trees")) {
            std::vector<Tree> per_class;
            for (const auto& t : round) per_class.push_back(tree_from_json(t));
            impl->rounds.push_back(std::move(per_class));
        }
        return impl;
    }
    if (kind == "ann") {
        auto impl = std::make_shared<MlpImpl>();
        impl->w1 = tensor_from_json(blob.at("w1"));
        impl->b1 = tensor_from_json(blob.at("b1"));
        impl->w2 = tensor_from_json(blob.at("w2"));
        impl->b2 = tensor_from_json(blob.at("b2"));
        return impl;
    }
    if (kind == "svm") {
        auto impl = std::make_shared<SvmImpl>();
        impl->svm = cv::Algorithm::loadFromString<cv::ml::SVM>(
            blob.at("opencv_yaml").get<std::string>());
        return impl;
    }
    throw std::runtime_error("unknown classifier blob kind: " + kind);
}

// ------------------------------------------------------------- fit per family

std::shared_ptr<TrainedClassifier::Impl> fit_forest(const Eigen::MatrixXd& x,
                                                    const std::vector<int>& y, int num_classes,
                                                    const json& hp, uint64_t seed) {
    auto impl = std::make_shared<ForestImpl>();
    impl->num_classes = num_classes;
    const int n_trees = hp.at("n_estimators").get<int>();
    const int max_depth = hp.at("max_depth").get<int>();
    const int max_features = std::max(
        1, static_cast<int>(std::sqrt(static_cast<double>(x.cols()))));
    const auto n = static_cast<size_t>(x.rows());
    for (int t = 0; t < n_trees; ++t) {
        Rng rng(seed + 0x1000 + static_cast<uint64_t>(t));
        std::vector<int> idx(n);
        for (size_t i = 0; i < n; ++i) idx[i] = static_cast<int>(rng.below(n));  // bootstrap
        CartBuilder builder{x, y, num_classes, max_depth, max_features, rng, {}};
        builder.build(idx, 0);
        impl->trees.push_back(std::move(builder.tree));
    }
    return impl;
}

std::shared_ptr<TrainedClassifier::Impl> fit_boost(const Eigen::MatrixXd& x,
                                                   const std::vector<int>& y, int num_classes,
                                                   const json& hp) {
    auto impl = std::make_shared<BoostImpl>();
    impl->num_classes = num_classes;
    impl->eta = hp.at("eta").get<double>();
    const int rounds = hp.at("n_rounds").get<int>();
    const int max_depth = hp.at("max_depth").get<int>();
    const double lambda = hp.at("lambda").get<double>();
    const double gamma = hp.at("gamma").get<double>();
    const double mcw = hp.at("min_child_weight").get<double>();

    const auto n = static_cast<size_t>(x.rows());
    Eigen::MatrixXd f = Eigen::MatrixXd::Zero(x.rows(), num_classes);
    std::vector<double> grad(n), hess(n);
    for (int round = 0; round < rounds; ++round) {
        Eigen::MatrixXd p = f;
        for (Eigen::Index r = 0; r < p.rows(); ++r) {
            const double mx = p.row(r).maxCoeff();
            p.row(r) = (p.row(r).array() - mx).exp();
            p.row(r) /= p.row(r).sum();
        }
        std::vector<Tree> per_class;
        for (int k = 0; k < num_classes; ++k) {
            for (size_t i = 0; i < n; ++i) {
                const double pk = p(static_cast<Eigen::Index>(i), k);
                grad[i] = pk - (y[i] == k ? 1.0 : 0.0);
                hess[i] = std::max(pk * (1.0 - pk), 1e-16);
            }
            std::vector<int> idx(n);
            std::iota(idx.begin(), idx.end(), 0);
            BoostTreeBuilder builder{x, grad, hess, max_depth, lambda, gamma, mcw, {}};
            builder.build(idx, 0);
            per_class.push_back(std::move(builder.tree));
        }
        for (Eigen::Index r = 0; r < f.rows(); ++r)
            for (int k = 0; k < num_classes; ++k)
                f(r, k) += impl->eta * tree_eval(per_class[static_cast<size_t>(k)], x, r);
        impl->rounds.push_back(std::move(per_class));
    }
    return impl;
}

std::shared_ptr<TrainedClassifier::Impl> fit_mlp(const Eigen::MatrixXd& x,
                                                 const std::vector<int>& y, int num_classes,
                                                 const json& hp, uint64_t seed) {
    const auto n = x.rows();
    const auto d = x.cols();
    const int hidden = hp.at("hidden_layers").at(0).get<int>();
    const int epochs = hp.at("max_iter").get<int>();
    const double lr = hp.at("learning_rate").get<double>();
    const double alpha = hp.at("alpha").get<double>();
    const auto batch = static_cast<Eigen::Index>(
        std::min<int>(hp.at("batch_size").get<int>(), static_cast<int>(n)));

    Rng rng(seed);
    nn::ParamSet params;
    nn::Linear l1 = nn::Linear::make(params, "l1", static_cast<int>(d), hidden, rng);
    nn::Linear l2 = nn::Linear::make(params, "l2", hidden, num_classes, rng);
    nn::AdamW opt(params, 0.0);

    std::vector<Eigen::Index> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    for (int epoch = 0; epoch < epochs; ++epoch) {
        rng.shuffle(order);
        for (Eigen::Index start = 0; start < n; start += batch) {
            const Eigen::Index take = std::min(batch, n - start);
            Tensor xb({take, d});
            std::vector<int> yb(static_cast<size_t>(take));
            for (Eigen::Index i = 0; i < take; ++i) {
                const Eigen::Index src = order[static_cast<size_t>(start + i)];
                for (Eigen::Index c = 0; c < d; ++c) xb.data()[i * d + c] = x(src, c);
                yb[static_cast<size_t>(i)] = y[static_cast<size_t>(src)];
            }
            opt.zero_grad();
            ag::Var logits = l2(ag::relu(l1(ag::constant(xb))));
            ag::Var loss = ag::cross_entropy_with_logits(logits, yb);
            const double l2_scale = alpha / (2.0 * static_cast<double>(take));
            loss = ag::add(loss, ag::mul_scalar(
                ag::add(ag::sum_all(ag::mul(l1.w, l1.w)), ag::sum_all(ag::mul(l2.w, l2.w))),
                l2_scale));
            ag::backward(loss);
            opt.step(lr);
        }
    }

    auto impl = std::make_shared<MlpImpl>();
    impl->w1 = l1.w.value().clone();
    impl->b1 = l1.b.value().clone();
    impl->w2 = l2.w.value().clone();
    impl->b2 = l2.b.value().clone();
    return impl;
}

std::shared_ptr<TrainedClassifier::Impl> fit_svm(const Eigen::MatrixXd& x,
                                                 const std::vector<int>& y, const json& hp) {
    cv::Mat xf(static_cast<int>(x.rows()), static_cast<int>(x.cols()), CV_32F);
    for (int r = 0; r < xf.rows; ++r)
        for (int c = 0; c < xf.cols; ++c) xf.at<float>(r, c) = static_cast<float>(x(r, c));
    cv::Mat yi(static_cast<int>(y.size()), 1, CV_32S);
    for (int r = 0; r < yi.rows; ++r) yi.at<int>(r, 0) = y[static_cast<size_t>(r)];

    auto svm = cv::ml::SVM::create();
    svm->setType(cv::ml::SVM::C_SVC);
    svm->setC(hp.at("C").get<double>());
    const std::string kernel = hp.at("kernel").get<std::string>();
    svm->setKernel(kernel == "rbf" ? cv::ml::SVM::RBF : cv::ml::SVM::POLY);
    // gamma = 'scale': 1 / (d * var(X)), the scikit-learn convention
    const double var = (x.array() - x.mean()).square().mean();
    const double gamma = 1.0 / (static_cast<double>(x.cols()) * std::max(var, 1e-12));
    svm->setGamma(gamma);
    if (kernel == "poly") {
        svm->setDegree(hp.at("degree").get<double>());
        svm->setCoef0(hp.at("coef0").get<double>());
    }
    svm->setTermCriteria(cv::TermCriteria(cv::TermCriteria::MAX_ITER + cv::TermCriteria::EPS,
                                          100000, 1e-6));
    svm->train(xf, cv::ml::ROW_SAMPLE, yi);

    auto impl = std::make_shared<SvmImpl>();
    impl->svm = svm;
    return impl;
}

}  // namespace

// --------------------------------------------------------------------- public

std::vector<std::string> TrainedClassifier::predict(const Eigen::MatrixXd& x) const {
    if (x.cols() != dim_)
        throw std::invalid_argument("predict: feature dimension " + std::to_string(x.cols()) +
                                    " does not match training dimension " + std::to_string(dim_));
    const Eigen::MatrixXd xs = scaler_ ? scaler_->transform(x) : x;
    std::vector<std::string> out;
    out.reserve(static_cast<size_t>(x.rows()));
    for (int idx : impl_->predict_indices(xs)) out.push_back(classes_.at(static_cast<size_t>(idx)));
    return out;
}

void TrainedClassifier::save(const std::string& path) const {
    {
        std::ofstream blob(path);
        if (!blob) throw std::runtime_error("cannot write model blob: " + path);
        blob << impl_->blob().dump();
    }
    json side = {{"family", to_string(spec_.family)},
                 {"hyperparams", spec_.hyperparams},
                 {"seed", seed_},
                 {"dim", dim_},
                 {"classes", classes_}};
    if (scaler_) side["scaler"] = {{"mean", scaler_->mean}, {"std", scaler_->std}};
    std::ofstream s(path + ".json");
    if (!s) throw std::runtime_error("cannot write model sidecar: " + path + ".json");
    s << side.dump(2) << "\n";
}

TrainedClassifier TrainedClassifier::load(const std::string& path) {
    std::ifstream blob_in(path);
    if (!blob_in) throw std::runtime_error("cannot open model blob: " + path);
    json blob;
    blob_in >> blob;
    std::ifstream side_in(path + ".json");
    if (!side_in) throw std::runtime_error("cannot open model sidecar: " + path + ".json");
    json side;
    side_in >> side;

    TrainedClassifier t;
    t.spec_.family = classifier_family_from_string(side.at("family").get<std::string>());
    t.spec_.hyperparams = side.at("hyperparams");
    t.seed_ = side.at("seed").get<uint64_t>();
    t.dim_ = side.at("dim").get<Eigen::Index>();
    t.classes_ = side.at("classes").get<std::vector<std::string>>();
    if (side.contains("scaler")) {
        StandardScaler s;
        s.mean = side.at("scaler").at("mean").get<std::vector<double>>();
        s.std = side.at("scaler").at("std").get<std::vector<double>>();
        t.scaler_ = std::move(s);
    }
    t.impl_ = blob_to_impl(blob);
    return t;
}

TrainedClassifier fit(const Classifier& clf, const Eigen::MatrixXd& x,
                      const std::vector<std::string>& y) {
    if (x.rows() == 0) throw std::invalid_argument("fit: empty training set");
    if (static_cast<size_t>(x.rows()) != y.size())
        throw std::invalid_argument("fit: sample/label count mismatch");

    TrainedClassifier out;
    out.spec_ = clf.spec;
    out.seed_ = clf.seed;
    out.dim_ = x.cols();

    std::set<std::string> uniq(y.begin(), y.end());
    if (uniq.size() < 2)
        throw std::invalid_argument("fit: training labels contain a single class");
    out.classes_.assign(uniq.begin(), uniq.end());
    std::vector<int> yi(y.size());
    for (size_t i = 0; i < y.size(); ++i)
        yi[i] = static_cast<int>(
            std::lower_bound(out.classes_.begin(), out.classes_.end(), y[i]) -
            out.classes_.begin());

    Eigen::MatrixXd xs = x;
    if (clf.spec.needs_scaling()) {
        out.scaler_ = StandardScaler::fit(x);
        xs = out.scaler_->transform(x);
    }

    const int k = static_cast<int>(out.classes_.size());
    switch (clf.spec.family) {
        case ClassifierFamily::RF:
            out.impl_ = fit_forest(xs, yi, k, clf.spec.hyperparams, clf.seed);
            break;
        case ClassifierFamily::XGB:
            out.impl_ = fit_boost(xs, yi, k, clf.spec.hyperparams);
            break;
        case ClassifierFamily::ANN:
            out.impl_ = fit_mlp(xs, yi, k, clf.spec.hyperparams, clf.seed);
            break;
        case ClassifierFamily::SVM_RBF:
        case ClassifierFamily::SVM_POLY:
            out.impl_ = fit_svm(xs, yi, clf.spec.hyperparams);
            break;
    }
    return out;
}

double accuracy(const std::vector<std::string>& predicted, const std::vector<std::string>& truth) {
    if (predicted.size() != truth.size())
        throw std::invalid_argument("accuracy: prediction/truth length mismatch");
    if (predicted.empty()) throw std::invalid_argument("accuracy: empty inputs");
    size_t ok = 0;
    for (size_t i = 0; i < predicted.size(); ++i) ok += predicted[i] == truth[i];
    return static_cast<double>(ok) / static_cast<double>(predicted.size());
}

std::pair<Eigen::MatrixXd, std::vector<std::string>> features_to_xy(const FeatureTable& t) {
    if (t.rows.empty()) return {Eigen::MatrixXd(0, 0), {}};
    const auto d = static_cast<Eigen::Index>(t.rows.front().z.size());
    Eigen::MatrixXd x(static_cast<Eigen::Index>(t.rows.size()), d);
    std::vector<std::string> y;
    y.reserve(t.rows.size());
    for (size_t i = 0; i < t.rows.size(); ++i) {
        if (static_cast<Eigen::Index>(t.rows[i].z.size()) != d)
            throw std::invalid_argument("feature table rows have inconsistent dimensions");
        for (Eigen::Index c = 0; c < d; ++c)
            x(static_cast<Eigen::Index>(i), c) = t.rows[i].z[static_cast<size_t>(c)];
        y.push_back(t.rows[i].label);
    }
    return {std::move(x), std::move(y)};
}

}  // namespace bcsam

#include <cmath>
#include <map>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "dialeval/models.hpp"
#include "dialeval/synthetic.hpp"
#include "support.hpp"

using namespace dialeval;
using namespace dialeval::models;

namespace {

double weighted_recall_oracle(const std::vector<int>& t, const std::vector<int>& p) {
    std::map<int, double> support, hits;
    for (std::size_t i = 0; i < t.size(); ++i) {
        support[t[i]] += 1.0;
        if (t[i] == p[i]) hits[t[i]] += 1.0;
    }
    double out = 0.0;
    for (const auto& [k, s] : support) out += (s / double(t.size())) * (hits[k] / s);
    return out;
}

// Two Gaussian blobs per class along a class-specific direction.
struct Blobs {
    Eigen::MatrixXd X;
    std::vector<int> y;
};

Blobs blobs(std::size_t per_class, std::vector<int> classes, double spread, std::uint64_t seed, Eigen::Index d = 3) {
    std::mt19937_64 gen(seed);
    std::normal_distribution<double> nd(0.0, spread);
    Blobs b;
    b.X.resize(static_cast<Eigen::Index>(per_class * classes.size()), d);
    Eigen::Index r = 0;
    for (std::size_t k = 0; k < classes.size(); ++k) {
        for (std::size_t i = 0; i < per_class; ++i, ++r) {
            for (Eigen::Index j = 0; j < d; ++j) b.X(r, j) = (j == Eigen::Index(k % std::size_t(d)) ? 4.0 * double(k + 1) : 0.0) + nd(gen);
            b.y.push_back(classes[k]);
        }
    }
    return b;
}

featurize::DesignMatrix planted_matrix(std::uint64_t seed, std::size_t dialogues = 24) {
    auto config = synthetic::keyword_groups();
    config.n_dialogues = dialogues;
    config.turns_per_dialogue = 24;
    const auto c = synthetic::generate_synthetic(config, seed);
    const auto minis = corpus::split_corpus(c, {});
    return featurize::build_matrix(minis, c.registry);
}

}  // namespace

TEST(Metrics, WorkedExample) {
    const std::vector<int> t{1, 1, 2}, p{1, 2, 2};
    const Metrics m = evaluate(t, p);
    EXPECT_NEAR(m.accuracy, 2.0 / 3.0, 1e-15);
    EXPECT_NEAR(m.recall, 2.0 / 3.0, 1e-15);
    EXPECT_NEAR(m.precision, 5.0 / 6.0, 1e-15);
    EXPECT_NEAR(m.f1, 2.0 / 3.0, 1e-15);
}

TEST(Metrics, NeverPredictedClassHasZeroPrecision) {
    const std::vector<int> t{1, 2, 3, 3}, p{3, 3, 3, 3};
    const Metrics m = evaluate(t, p);
    EXPECT_NEAR(m.accuracy, 0.5, 1e-15);
    EXPECT_NEAR(m.precision, 0.5 * 0.5, 1e-15);
    EXPECT_NEAR(m.f1, 0.5 * (2.0 * 0.5 / 1.5), 1e-15);
}

TEST(Metrics, AccuracyEqualsWeightedRecall) {
    std::mt19937 gen(99);
    std::uniform_int_distribution<int> lab(1, 5);
    std::uniform_int_distribution<std::size_t> len(1, 60);
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t n = len(gen);
        std::vector<int> t(n), p(n);
        for (auto& v : t) v = lab(gen);
        for (std::size_t i = 0; i < n; ++i) p[i] = gen() % 3 == 0 ? t[i] : lab(gen);
        const Metrics m = evaluate(t, p);
        EXPECT_EQ(m.accuracy, m.recall);
        EXPECT_NEAR(weighted_recall_oracle(t, p), m.accuracy, 1e-12);
        for (double v : {m.accuracy, m.precision, m.recall, m.f1}) {
            EXPECT_GE(v, 0.0);
            EXPECT_LE(v, 1.0);
        }
    }
}

TEST(Metrics, Errors) {
    EXPECT_THROW(evaluate(std::vector<int>{}, std::vector<int>{}), DataError);
    EXPECT_THROW(evaluate(std::vector<int>{1}, std::vector<int>{1, 2}), DataError);
}

TEST(Softmax, GradientMatchesFiniteDifferences) {
    std::mt19937_64 gen(4);
    std::normal_distribution<double> nd;
    const Eigen::Index n = 12, d = 4, K = 3;
    Eigen::MatrixXd Z(n, d);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < d; ++j) Z(i, j) = nd(gen);
    }
    std::vector<std::size_t> y(static_cast<std::size_t>(n));
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = i % 3;
    SoftmaxParams p = SoftmaxParams::zeros(K, d);
    for (Eigen::Index k = 0; k < K; ++k) {
        p.bias(k) = nd(gen);
        for (Eigen::Index j = 0; j < d; ++j) p.weights(k, j) = nd(gen);
    }
    const double lambda = 0.05, h = 1e-5;
    SoftmaxParams grad;
    softmax_loss(p, Z, y, lambda, &grad);
    for (Eigen::Index k = 0; k < K; ++k) {
        for (Eigen::Index j = 0; j < d; ++j) {
            SoftmaxParams up = p, down = p;
            up.weights(k, j) += h;
            down.weights(k, j) -= h;
            const double numeric = (softmax_loss(up, Z, y, lambda) - softmax_loss(down, Z, y, lambda)) / (2 * h);
            EXPECT_NEAR(grad.weights(k, j), numeric, 1e-7);
        }
        SoftmaxParams up = p, down = p;
        up.bias(k) += h;
        down.bias(k) -= h;
        const double numeric = (softmax_loss(up, Z, y, lambda) - softmax_loss(down, Z, y, lambda)) / (2 * h);
        EXPECT_NEAR(grad.bias(k), numeric, 1e-7);
    }
}

TEST(Softmax, LossAtZeroIsLogK) {
    Eigen::MatrixXd Z = Eigen::MatrixXd::Random(10, 3);
    std::vector<std::size_t> y{0, 1, 2, 3, 0, 1, 2, 3, 0, 1};
    EXPECT_NEAR(softmax_loss(SoftmaxParams::zeros(4, 3), Z, y, 0.3), std::log(4.0), 1e-12);
}

TEST(LogisticRegression, SeparatesBlobs) {
    const auto b = blobs(30, {1, 3, 5}, 0.5, 1);
    const auto model = train(ClassifierSpec::defaults(Kind::lr), b.X, b.y);
    EXPECT_EQ(model.classes, (std::vector<int>{1, 3, 5}));
    EXPECT_EQ(predict(model, b.X).labels, b.y);
    EXPECT_GT(model.epochs, 0u);
}

TEST(LogisticRegression, ConstantColumnGetsZeroWeight) {
    auto b = blobs(20, {1, 2}, 0.5, 2);
    b.X.col(2).setConstant(0.7);
    const auto model = train(ClassifierSpec::defaults(Kind::lr), b.X, b.y);
    EXPECT_EQ(model.standardizer.scale(2), 0.0);
    EXPECT_EQ(model.softmax().weights.col(2).cwiseAbs().maxCoeff(), 0.0);
}

TEST(LogisticRegression, PredictionsIgnorePositiveRescaling) {
    const auto b = blobs(25, {1, 2, 4}, 1.5, 3);
    const auto base = train(ClassifierSpec::defaults(Kind::lr), b.X, b.y);
    for (double c : {1e-3, 0.5, 7.0, 1e4}) {
        Eigen::MatrixXd scaled = b.X;
        scaled.col(1) *= c;
        const auto model = train(ClassifierSpec::defaults(Kind::lr), scaled, b.y);
        EXPECT_EQ(predict(model, scaled).labels, predict(base, b.X).labels) << c;
    }
}

TEST(Standardization, UsesTrainingStatisticsOnly) {
    const auto b = blobs(20, {1, 2}, 1.0, 5);
    for (Kind kind : {Kind::lr, Kind::nb}) {
        const auto model = train(ClassifierSpec::defaults(kind), b.X, b.y);
        const Eigen::VectorXd mean = b.X.colwise().mean().transpose();
        EXPECT_TRUE(model.standardizer.mean.isApprox(mean, 1e-12));
        // A wild test row must not change predictions for the other rows.
        Eigen::MatrixXd with_outlier(b.X.rows() + 1, b.X.cols());
        with_outlier << b.X, Eigen::RowVectorXd::Constant(b.X.cols(), 1e6);
        const auto alone = predict(model, b.X);
        const auto batch = predict(model, with_outlier);
        EXPECT_EQ(std::vector<int>(batch.labels.begin(), batch.labels.end() - 1), alone.labels);
        EXPECT_TRUE(batch.scores.topRows(b.X.rows()).isApprox(alone.scores, 1e-15));
    }
}

TEST(NaiveBayes, PosteriorMatchesBayesRule) {
    const auto b = blobs(15, {2, 3, 5}, 1.2, 6, 2);
    const auto model = train(ClassifierSpec::defaults(Kind::nb), b.X, b.y);
    const auto pred = predict(model, b.X);

    // Oracle: standardize, per-class sample statistics, product of normal densities.
    const Eigen::Index n = b.X.rows(), d = b.X.cols();
    Eigen::MatrixXd Z(n, d);
    for (Eigen::Index j = 0; j < d; ++j) {
        const double mu = b.X.col(j).mean();
        const double sd = std::sqrt((b.X.col(j).array() - mu).square().mean());
        Z.col(j) = (b.X.col(j).array() - mu) / sd;
    }
    const double eps = 1e-9 * 1.0;  // standardized columns all have variance 1
    const std::vector<int> classes{2, 3, 5};
    for (Eigen::Index i = 0; i < n; ++i) {
        std::vector<double> joint;
        for (int c : classes) {
            std::vector<Eigen::Index> rows;
            for (Eigen::Index r = 0; r < n; ++r) {
                if (b.y[std::size_t(r)] == c) rows.push_back(r);
            }
            double dens = double(rows.size()) / double(n);
            for (Eigen::Index j = 0; j < d; ++j) {
                double mu = 0.0, var = 0.0;
                for (auto r : rows) mu += Z(r, j);
                mu /= double(rows.size());
                for (auto r : rows) var += (Z(r, j) - mu) * (Z(r, j) - mu);
                var = var / double(rows.size()) + eps;
                dens *= std::exp(-(Z(i, j) - mu) * (Z(i, j) - mu) / (2 * var)) / std::sqrt(2 * std::numbers::pi * var);
            }
            joint.push_back(dens);
        }
        double total = 0.0;
        for (double v : joint) total += v;
        for (std::size_t k = 0; k < classes.size(); ++k) {
            EXPECT_NEAR(pred.scores(i, Eigen::Index(k)), joint[k] / total, 1e-9);
        }
    }
}

TEST(RandomForest, DeterministicForSeed) {
    const auto b = blobs(20, {1, 2, 3}, 2.0, 7, 5);
    auto spec = ClassifierSpec::defaults(Kind::rf, 11);
    spec.n_trees = 30;
    const auto a = train(spec, b.X, b.y);
    const auto c = train(spec, b.X, b.y);
    EXPECT_EQ(to_json(a).dump(), to_json(c).dump());
    spec.seed = 12;
    const auto other = train(spec, b.X, b.y);
    EXPECT_NE(to_json(a).dump(), to_json(other).dump());
}

TEST(RandomForest, FullTreeFitsDistinctPointsExactly) {
    const auto b = blobs(20, {1, 2, 3}, 3.0, 8, 4);
    auto spec = ClassifierSpec::defaults(Kind::rf, 1);
    spec.n_trees = 1;
    spec.bootstrap = false;
    spec.features_per_split = 4;
    const auto model = train(spec, b.X, b.y);
    EXPECT_EQ(predict(model, b.X).labels, b.y);
    const auto p = predict(model, b.X);
    EXPECT_TRUE(((p.scores.array() == 0.0) || (p.scores.array() == 1.0)).all());
}

TEST(RandomForest, InvariantUnderMonotoneRescaling) {
    const auto b = blobs(20, {1, 2}, 2.0, 9);
    auto spec = ClassifierSpec::defaults(Kind::rf, 3);
    spec.n_trees = 20;
    const auto base = train(spec, b.X, b.y);
    Eigen::MatrixXd scaled = b.X * 8.0;
    const auto model = train(spec, scaled, b.y);
    EXPECT_EQ(predict(model, scaled).labels, predict(base, b.X).labels);
}

TEST(Train, Errors) {
    Eigen::MatrixXd X = Eigen::MatrixXd::Random(4, 2);
    EXPECT_THROW(train(ClassifierSpec::defaults(Kind::lr), X, std::vector<int>{1, 1, 1, 1}), NumericError);
    EXPECT_THROW(train(ClassifierSpec::defaults(Kind::lr), X, std::vector<int>{1, 2, 1}), DataError);
    X(0, 0) = std::nan("");
    EXPECT_THROW(train(ClassifierSpec::defaults(Kind::nb), X, std::vector<int>{1, 2, 1, 2}), DataError);
    auto bad = ClassifierSpec::defaults(Kind::lr);
    bad.learning_rate = 0.0;
    EXPECT_THROW(bad.check(), DataError);
    const auto b = blobs(5, {1, 2}, 1.0, 1);
    const auto model = train(ClassifierSpec::defaults(Kind::lr), b.X, b.y);
    EXPECT_THROW(predict(model, Eigen::MatrixXd::Zero(2, 4)), DataError);
}

TEST(Persistence, RoundTripPreservesPredictions) {
    const auto m = planted_matrix(5, 12);
    for (Kind kind : kAllKinds) {
        auto spec = ClassifierSpec::defaults(kind, 4);
        spec.n_trees = 15;
        const auto model = train(spec, m, "topic");
        const json j = to_json(model);
        const auto back = model_from_json(json::parse(j.dump()));
        EXPECT_EQ(to_json(back).dump(), j.dump());
        const auto a = predict(model, m), b = predict(back, m);
        EXPECT_EQ(a.labels, b.labels);
        EXPECT_TRUE(a.scores.isApprox(b.scores, 1e-12));
    }
    EXPECT_THROW(model_from_json(json{{"format", "other"}}), std::exception);
}

TEST(Folds, StratifiedAndBalanced) {
    std::mt19937 gen(21);
    std::uniform_int_distribution<int> lab(1, 5);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<int> y(20 + gen() % 100);
        for (auto& v : y) v = lab(gen);
        const std::size_t k = 2 + gen() % 6;
        const auto plan = stratified_folds(y, k, trial);
        std::map<int, std::vector<std::size_t>> per_class;
        std::vector<std::size_t> sizes(k, 0);
        for (std::size_t i = 0; i < y.size(); ++i) {
            const int f = plan.fold_of_row[i];
            if (f < 0) continue;
            auto& counts = per_class[y[i]];
            counts.resize(k, 0);
            ++counts[std::size_t(f)];
            ++sizes[std::size_t(f)];
        }
        for (const auto& [label, counts] : per_class) {
            EXPECT_LE(*std::max_element(counts.begin(), counts.end()) - *std::min_element(counts.begin(), counts.end()), 1u);
        }
        EXPECT_LE(*std::max_element(sizes.begin(), sizes.end()) - *std::min_element(sizes.begin(), sizes.end()), 1u);
    }
}

TEST(Folds, SingletonClassStaysInTraining) {
    const std::vector<int> y{1, 1, 1, 2, 2, 2, 3, 4, 4};
    const auto plan = stratified_folds(y, 3, 0);
    EXPECT_EQ(plan.fold_of_row[6], -1);
    ASSERT_EQ(plan.notes.size(), 1u);
    EXPECT_NE(plan.notes[0].find("class 3"), std::string::npos);
    EXPECT_THROW(stratified_folds(y, 1, 0), DataError);
}

TEST(CrossValidation, DeterministicAndAveraged) {
    const auto m = planted_matrix(6);
    std::vector<ClassifierSpec> specs;
    for (Kind kind : kAllKinds) {
        auto s = ClassifierSpec::defaults(kind, 2);
        s.n_trees = 20;
        specs.push_back(s);
    }
    const auto a = cross_validate(m, specs, 5, 42);
    const auto b = cross_validate(m, specs, 5, 42);
    EXPECT_EQ(to_json(a).dump(), to_json(b).dump());
    EXPECT_EQ(a.cells.size(), 4u);

    const auto cv = cross_validate(m, "tone", specs[0], 5, 42);
    ASSERT_EQ(cv.per_fold.size(), 5u);
    double f1 = 0.0;
    for (const auto& f : cv.per_fold) f1 += f.f1;
    EXPECT_NEAR(cv.mean.f1, f1 / 5.0, 1e-12);
    EXPECT_EQ(cv.mean, a.cells.at("tone").at(Kind::lr));

    const std::string table = to_table(a);
    EXPECT_NE(table.find("Topic"), std::string::npos);
    EXPECT_NE(table.find("F1"), std::string::npos);
}

TEST(BagOfWords, CountsLowercasedTokens) {
    corpus::MiniDialogue a, b;
    a.id = "a";
    a.turns = {testsupport::make_turn(0, "x", "Hello hello world")};
    a.inherited_labels = {{"topic", 1}};
    b.id = "b";
    b.turns = {testsupport::make_turn(0, "x", "world peace")};
    b.inherited_labels = {{"topic", 2}};
    std::vector<corpus::MiniDialogue> minis{a, b};
    const auto m = bag_of_words(minis);
    EXPECT_EQ(m.feature_ids, (std::vector<std::string>{"hello", "peace", "world"}));
    EXPECT_EQ(m.values(0, 0), 2.0);
    EXPECT_EQ(m.values(0, 2), 1.0);
    EXPECT_EQ(m.values(1, 1), 1.0);
    EXPECT_EQ(m.target("topic"), (std::vector<int>{1, 2}));
}

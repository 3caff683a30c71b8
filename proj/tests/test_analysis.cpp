#include <algorithm>
#include <numeric>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "dialeval/analysis.hpp"
#include "dialeval/synthetic.hpp"

using namespace dialeval;
using namespace dialeval::analysis;
using models::ClassifierSpec;

namespace {

const auto& registry() {
    static const auto r = corpus::default_registry();
    return r;
}

std::vector<std::string> registry_ids() {
    std::vector<std::string> ids;
    for (const auto& f : registry()) ids.push_back(f.id);
    return ids;
}

// Importances drawn from a small grid so ties and zeros are common.
std::vector<double> grid_importance(std::mt19937& gen) {
    std::uniform_int_distribution<int> level(0, 6);
    std::vector<double> v(registry().size());
    for (auto& x : v) x = 0.25 * level(gen);
    return v;
}

// Set algebra over registry indices, written without the library's helpers.
std::vector<std::string> common_oracle(const std::map<std::string, std::vector<double>>& imp) {
    const auto ids = registry_ids();
    std::vector<std::set<std::size_t>> tops;
    std::vector<double> summed(ids.size(), 0.0);
    for (const auto& [label, v] : imp) {
        std::vector<std::size_t> order(ids.size());
        std::iota(order.begin(), order.end(), 0u);
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] != v[b] ? v[a] > v[b] : a < b; });
        std::set<std::size_t> top;
        for (std::size_t i = 0; i < order.size() && top.size() < 10; ++i) {
            if (v[order[i]] > 0.0) top.insert(order[i]);
        }
        tops.push_back(top);
        for (std::size_t j = 0; j < ids.size(); ++j) summed[j] += v[j];
    }
    std::set<std::size_t> inter = tops[0];
    for (std::size_t t = 1; t < tops.size(); ++t) {
        std::set<std::size_t> next;
        std::set_intersection(inter.begin(), inter.end(), tops[t].begin(), tops[t].end(), std::inserter(next, next.end()));
        inter = next;
    }
    std::vector<std::size_t> ranked(inter.begin(), inter.end());
    std::sort(ranked.begin(), ranked.end(), [&](std::size_t a, std::size_t b) {
        return summed[a] != summed[b] ? summed[a] > summed[b] : a < b;
    });
    std::vector<std::string> out;
    for (std::size_t i = 0; i < ranked.size() && i < 5; ++i) out.push_back(ids[ranked[i]]);
    return out;
}

std::vector<corpus::MiniDialogue> planted_minis(synthetic::SyntheticConfig config, std::uint64_t seed, std::size_t dialogues = 24) {
    config.n_dialogues = dialogues;
    config.turns_per_dialogue = 24;
    const auto c = synthetic::generate_synthetic(config, seed);
    return corpus::split_corpus(c, {});
}

}  // namespace

TEST(Ranking, DescendingWithRegistryTieBreak) {
    const auto ids = registry_ids();
    std::vector<double> v(ids.size(), 0.0);
    v[3] = 0.5;
    v[1] = 0.5;
    v[10] = 0.9;
    v[5] = -0.2;
    const auto list = make_list("topic", Kind::lr, ids, v);
    ASSERT_EQ(list.entries.size(), ids.size());
    EXPECT_EQ(list.entries[0].feature_id, ids[10]);
    EXPECT_EQ(list.entries[1].feature_id, ids[1]);
    EXPECT_EQ(list.entries[2].feature_id, ids[3]);
    EXPECT_EQ(list.entries[3].feature_id, ids[0]);
    for (const auto& e : list.entries) EXPECT_GE(e.importance, 0.0);
    std::set<std::string> seen;
    for (const auto& e : list.entries) seen.insert(e.feature_id);
    EXPECT_EQ(seen.size(), ids.size());
    EXPECT_EQ(top_k(list), (std::vector<std::string>{ids[10], ids[1], ids[3]}));
}

TEST(CommonFeatures, MatchesSetAlgebraOracle) {
    std::mt19937 gen(31);
    const auto ids = registry_ids();
    for (int trial = 0; trial < 500; ++trial) {
        std::map<std::string, std::vector<double>> imp;
        std::map<std::string, WeightedFeatureList> lists;
        for (auto label : corpus::kLabelIds) {
            imp[std::string(label)] = grid_importance(gen);
            lists.emplace(std::string(label), make_list(std::string(label), Kind::rf, ids, imp[std::string(label)]));
        }
        const auto common = common_features(lists);
        EXPECT_EQ(common.features, common_oracle(imp)) << "trial " << trial;
        EXPECT_LE(common.features.size(), kCommonK);
        for (const auto& [label, list] : lists) {
            const auto top = top_k(list);
            for (const auto& f : common.features) EXPECT_NE(std::find(top.begin(), top.end(), f), top.end());
            const auto specific = specific_features(list, common.features);
            for (const auto& f : specific.features) {
                EXPECT_EQ(std::find(common.features.begin(), common.features.end(), f), common.features.end());
            }
            EXPECT_EQ(specific.features.size() + common.features.size(), top.size());
        }
    }
}

TEST(CommonFeatures, InvariantUnderLabelOrder) {
    std::mt19937 gen(32);
    const auto ids = registry_ids();
    const std::vector<std::string> labels{"topic", "tone", "opening", "closing"};
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<std::vector<double>> values;
        for (int l = 0; l < 4; ++l) values.push_back(grid_importance(gen));
        std::map<std::string, WeightedFeatureList> a, b;
        std::vector<std::size_t> perm{2, 0, 3, 1};
        for (std::size_t l = 0; l < 4; ++l) {
            a.emplace(labels[l], make_list(labels[l], Kind::nb, ids, values[l]));
            b.emplace(labels[perm[l]], make_list(labels[perm[l]], Kind::nb, ids, values[l]));
        }
        EXPECT_EQ(common_features(a).features, common_features(b).features);
    }
}

TEST(CommonFeatures, EmptyCommonLeavesTopListsIntact) {
    const auto ids = registry_ids();
    std::map<std::string, WeightedFeatureList> lists;
    std::size_t offset = 0;
    for (auto label : corpus::kLabelIds) {
        std::vector<double> v(ids.size(), 0.0);
        for (std::size_t i = 0; i < 4; ++i) v[offset + i] = 1.0 + double(i);
        offset += 4;
        lists.emplace(std::string(label), make_list(std::string(label), Kind::lr, ids, v));
    }
    const auto common = common_features(lists);
    EXPECT_TRUE(common.features.empty());
    for (const auto& [label, list] : lists) EXPECT_EQ(specific_features(list, {}).features, top_k(list));
}

TEST(CommonFeatures, Errors) {
    std::map<std::string, WeightedFeatureList> lists;
    EXPECT_THROW(common_features(lists), DataError);
    const auto ids = registry_ids();
    const std::vector<double> v(ids.size(), 1.0);
    for (auto label : corpus::kLabelIds) lists.emplace(std::string(label), make_list(std::string(label), Kind::lr, ids, v));
    lists.at("tone").kind = Kind::rf;
    EXPECT_THROW(common_features(lists), DataError);
    lists.erase("tone");
    EXPECT_THROW(common_features(lists), DataError);
}

TEST(ModelImportance, ConstantFeatureScoresZero) {
    const auto minis = planted_minis(synthetic::one_feature_per_label(), 3);
    auto m = featurize::build_matrix(minis, registry());
    const auto col = std::find(m.feature_ids.begin(), m.feature_ids.end(), "code_switching") - m.feature_ids.begin();
    m.values.col(col).setConstant(0.3);
    for (Kind kind : models::kAllKinds) {
        auto spec = ClassifierSpec::defaults(kind, 1);
        spec.n_trees = 20;
        const auto model = models::train(spec, m, "topic");
        const auto list = model_importance(model, "topic");
        for (const auto& e : list.entries) {
            if (e.feature_id == "code_switching") {
                EXPECT_EQ(e.importance, 0.0) << models::to_string(kind);
            }
        }
        const auto top = top_k(list);
        EXPECT_EQ(std::find(top.begin(), top.end(), "code_switching"), top.end());
    }
}

TEST(ModelImportance, NaiveBayesRatioOracle) {
    const auto minis = planted_minis(synthetic::one_feature_per_label(), 4);
    const auto m = featurize::build_matrix(minis, registry());
    const auto model = models::train(ClassifierSpec::defaults(Kind::nb), m, "tone");
    const auto list = model_importance(model, "tone");
    const auto& y = m.target("tone");
    const auto classes = models::distinct_sorted(y);
    const double n = double(y.size());
    const double eps = model.naive_bayes().epsilon;
    for (Eigen::Index j = 0; j < m.values.cols(); ++j) {
        const auto& col = m.values.col(j);
        const double mu = col.mean();
        const double sd = std::sqrt((col.array() - mu).square().mean());
        std::vector<double> z(y.size());
        for (std::size_t i = 0; i < y.size(); ++i) z[i] = sd > 0 && col.maxCoeff() != col.minCoeff() ? (col(Eigen::Index(i)) - mu) / sd : 0.0;
        double grand = 0.0, between = 0.0, within = 0.0;
        std::vector<double> prior, mean, var;
        for (int c : classes) {
            double cnt = 0.0, s = 0.0;
            for (std::size_t i = 0; i < y.size(); ++i) {
                if (y[i] == c) cnt += 1.0, s += z[i];
            }
            const double mc = s / cnt;
            double v = 0.0;
            for (std::size_t i = 0; i < y.size(); ++i) {
                if (y[i] == c) v += (z[i] - mc) * (z[i] - mc);
            }
            prior.push_back(cnt / n);
            mean.push_back(mc);
            var.push_back(v / cnt + eps);
            grand += (cnt / n) * mc;
        }
        for (std::size_t k = 0; k < classes.size(); ++k) {
            between += prior[k] * (mean[k] - grand) * (mean[k] - grand);
            within += prior[k] * var[k];
        }
        const double expected = within > 0 ? between / within : 0.0;
        const auto it = std::find_if(list.entries.begin(), list.entries.end(),
                                     [&](const WeightedFeature& e) { return e.feature_id == m.feature_ids[std::size_t(j)]; });
        EXPECT_NEAR(it->importance, expected, 1e-9 * std::max(1.0, expected)) << it->feature_id;
    }
}

TEST(ModelImportance, InvariantUnderRowPermutation) {
    const auto minis = planted_minis(synthetic::shared_features(), 5);
    const auto m = featurize::build_matrix(minis, registry());
    std::vector<Eigen::Index> perm(static_cast<std::size_t>(m.values.rows()));
    std::iota(perm.begin(), perm.end(), 0);
    std::mt19937 gen(3);
    std::shuffle(perm.begin(), perm.end(), gen);
    featurize::DesignMatrix p = m;
    p.values = m.values(perm, Eigen::all);
    for (auto& [label, column] : p.targets) {
        for (std::size_t i = 0; i < perm.size(); ++i) column[i] = m.targets.at(label)[std::size_t(perm[i])];
    }
    for (Kind kind : {Kind::lr, Kind::nb}) {
        const auto a = model_importance(models::train(ClassifierSpec::defaults(kind), m, "opening"), "opening");
        const auto b = model_importance(models::train(ClassifierSpec::defaults(kind), p, "opening"), "opening");
        std::map<std::string, double> va, vb;
        for (const auto& e : a.entries) va[e.feature_id] = e.importance;
        for (const auto& e : b.entries) vb[e.feature_id] = e.importance;
        for (const auto& [id, v] : va) EXPECT_NEAR(vb[id], v, 1e-9) << id;
        EXPECT_EQ(top_k(a), top_k(b));
    }
}

TEST(ModelImportance, RequiresFullRegistryColumns) {
    const auto minis = planted_minis(synthetic::one_feature_per_label(), 6, 8);
    const auto m = featurize::build_matrix(minis, registry(), featurize::LevelFilter::token_only);
    const auto model = models::train(ClassifierSpec::defaults(Kind::lr), m, "topic");
    EXPECT_THROW(model_importance(model, "topic"), DataError);
}

TEST(PermutationImportance, PlantedFeatureDominates) {
    const auto minis = planted_minis(synthetic::one_feature_per_label(), 7);
    const auto m = featurize::build_matrix(minis, registry());
    const auto model = models::train(ClassifierSpec::defaults(Kind::lr), m, "topic");
    const auto list = permutation_importance(model, m, "topic", 3, 1);
    EXPECT_EQ(list.entries.front().feature_id, "negotiation_of_meaning");
    for (const auto& e : list.entries) EXPECT_GE(e.importance, 0.0);
    EXPECT_THROW(permutation_importance(model, m, "topic", 0, 1), DataError);
}

TEST(Ablation, BothColumnEqualsStandaloneCrossValidation) {
    const auto minis = planted_minis(synthetic::token_signal(), 8);
    std::vector<ClassifierSpec> specs;
    for (Kind kind : models::kAllKinds) {
        auto s = ClassifierSpec::defaults(kind, 5);
        s.n_trees = 15;
        specs.push_back(s);
    }
    const auto table = run_ablation(minis, registry(), specs, 5, 42);
    const auto m = featurize::build_matrix(minis, registry());
    const auto report = models::cross_validate(m, specs, 5, 42);
    for (const auto& spec : specs) {
        for (const auto& [label, row] : table.f1.at(spec.kind)) {
            EXPECT_EQ(row[2], report.cells.at(label).at(spec.kind).f1) << label;
            for (double v : row) {
                EXPECT_GE(v, 0.0);
                EXPECT_LE(v, 1.0);
            }
        }
    }
    const auto tok = featurize::build_matrix(minis, registry(), featurize::LevelFilter::token_only);
    EXPECT_EQ(table.f1.at(Kind::nb).at("topic")[0], models::cross_validate(tok, "topic", specs[2], 5, 42).mean.f1);
    const std::string text = to_table(table);
    EXPECT_NE(text.find("Topic"), std::string::npos);
    EXPECT_EQ(to_json(table)["folds"], 5);
}

TEST(ImportanceReport, ShapeAndOverlapCounts) {
    const auto minis = planted_minis(synthetic::shared_features(), 9);
    const auto m = featurize::build_matrix(minis, registry());
    std::vector<ClassifierSpec> specs;
    for (Kind kind : models::kAllKinds) {
        auto s = ClassifierSpec::defaults(kind, 5);
        s.n_trees = 20;
        specs.push_back(s);
    }
    const auto report = importance_report(m, specs, registry(), 5);
    ASSERT_EQ(report.kinds.size(), 3u);
    for (const auto& [kind, k] : report.kinds) {
        EXPECT_EQ(k.lists.size(), 4u);
        EXPECT_EQ(k.specific.size(), 4u);
    }
    const json j = to_json(report);
    EXPECT_EQ(j["top_k"], 10);
    EXPECT_FALSE(to_top_table(report).empty());
    EXPECT_FALSE(to_specific_table(report).empty());
}

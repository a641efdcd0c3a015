#include "fedsiam/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "fedsiam/errors.hpp"

namespace fedsiam {

namespace {

// Split `total` into one bin per positive weight, proportional to the weights
// (largest remainder, ties to the lower index). With min_one, every bin with
// positive weight gets at least one unit.
std::vector<long> proportional_quotas(long total, const std::vector<double>& weights,
                                      bool min_one) {
    const std::size_t n = weights.size();
    std::vector<long> out(n, 0);
    double wsum = 0.0;
    for (double w : weights) wsum += w;
    if (wsum <= 0.0 || total <= 0) return out;

    std::vector<double> frac(n, 0.0);
    long assigned = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double share = total * (weights[i] / wsum);
        out[i] = static_cast<long>(std::floor(share));
        frac[i] = share - static_cast<double>(out[i]);
        assigned += out[i];
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return frac[a] > frac[b]; });
    const long remainder = total - assigned;
    for (long i = 0; i < remainder; ++i) out[order[static_cast<std::size_t>(i)]] += 1;
    if (min_one) {
        for (std::size_t i = 0; i < n; ++i) {
            if (weights[i] > 0.0 && out[i] == 0) {
                // take one unit from the largest bin
                std::size_t donor = i;
                for (std::size_t j = 0; j < n; ++j) {
                    if (out[j] > out[donor]) donor = j;
                }
                if (out[donor] < 2) throw PartitionError("quota too small to cover every class");
                out[donor] -= 1;
                out[i] += 1;
            }
        }
    }
    return out;
}

// Shard sizes: floor(total/K) with the remainder going to the earliest shards.
std::vector<long> even_sizes(long total, int k) {
    std::vector<long> sizes(static_cast<std::size_t>(k), total / k);
    for (long i = 0; i < total % k; ++i) sizes[static_cast<std::size_t>(i)] += 1;
    return sizes;
}

// Per-shard labeled counts: floor(gamma*size), remainder to earliest shards
// so the total matches round(gamma * sum(sizes)).
std::vector<long> labeled_counts(const std::vector<long>& sizes, double gamma) {
    long total = 0;
    for (long s : sizes) total += s;
    const long target = std::llround(gamma * static_cast<double>(total));
    std::vector<long> out(sizes.size(), 0);
    long assigned = 0;
    for (std::size_t i = 0; i < sizes.size(); ++i) {
        out[i] = static_cast<long>(std::floor(gamma * static_cast<double>(sizes[i])));
        assigned += out[i];
    }
    for (std::size_t i = 0; i < sizes.size() && assigned < target; ++i) {
        if (out[i] < sizes[i]) {
            out[i] += 1;
            ++assigned;
        }
    }
    return out;
}

struct ClassPools {
    std::vector<std::vector<int>> indices;  // shuffled sample indices per class
    std::vector<std::size_t> cursor;

    long remaining(int c) const {
        return static_cast<long>(indices[static_cast<std::size_t>(c)].size() -
                                 cursor[static_cast<std::size_t>(c)]);
    }

    // Takes n indices from class c or throws naming the class.
    std::vector<int> take(int c, long n) {
        auto& cur = cursor[static_cast<std::size_t>(c)];
        const auto& pool = indices[static_cast<std::size_t>(c)];
        if (static_cast<long>(pool.size() - cur) < n) {
            throw PartitionError("class " + std::to_string(c) + " has too few samples for the partition");
        }
        std::vector<int> out(pool.begin() + static_cast<long>(cur),
                             pool.begin() + static_cast<long>(cur) + n);
        cur += static_cast<std::size_t>(n);
        return out;
    }
};

ClassPools make_pools(const Dataset& data, Rng& rng) {
    ClassPools pools;
    pools.indices.assign(static_cast<std::size_t>(data.classes), {});
    pools.cursor.assign(static_cast<std::size_t>(data.classes), 0);
    for (int i = 0; i < data.size(); ++i) {
        pools.indices[static_cast<std::size_t>(data.labels[static_cast<std::size_t>(i)])].push_back(i);
    }
    for (auto& pool : pools.indices) rng.shuffle(pool);
    return pools;
}

// C' distinct classes per client, consumed from concatenated random class
// permutations; every class gets used as long as K*C' >= C.
std::vector<std::vector<int>> assign_client_classes(int clients, int classes, int per_client,
                                                    Rng& rng) {
    if (per_client > classes) {
        throw PartitionError("classes_per_client exceeds the dataset's class count");
    }
    std::vector<int> stream;
    auto extend = [&] {
        auto perm = rng.permutation(classes);
        stream.insert(stream.end(), perm.begin(), perm.end());
    };
    std::vector<std::vector<int>> out(static_cast<std::size_t>(clients));
    std::size_t pos = 0;
    for (auto& mine : out) {
        while (static_cast<int>(mine.size()) < per_client) {
            if (pos >= stream.size()) extend();
            const int c = stream[pos++];
            if (std::find(mine.begin(), mine.end(), c) == mine.end()) mine.push_back(c);
        }
    }
    return out;
}

Matrix gather_rows(const Dataset& data, const std::vector<int>& idx) {
    Matrix out(static_cast<int>(idx.size()), data.dim());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        const double* src = data.features.row_ptr(idx[i]);
        std::copy(src, src + data.dim(), out.row_ptr(static_cast<int>(i)));
    }
    return out;
}

std::vector<int> gather_labels(const Dataset& data, const std::vector<int>& idx) {
    std::vector<int> out(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) out[i] = data.labels[static_cast<std::size_t>(idx[i])];
    return out;
}

void fill_shard(ClientShard& shard, const Dataset& data, const std::vector<int>& labeled_idx,
                const std::vector<int>& unlabeled_idx) {
    shard.labeled_idx = labeled_idx;
    shard.labeled_x = gather_rows(data, labeled_idx);
    shard.labeled_y = gather_labels(data, labeled_idx);
    shard.unlabeled_idx = unlabeled_idx;
    shard.unlabeled_x = gather_rows(data, unlabeled_idx);
    shard.unlabeled_audit_y = gather_labels(data, unlabeled_idx);
}

// Splits a client's drawn indices (grouped per class) into labeled/unlabeled.
// want_labeled is spread over the groups proportionally; min_each forces at
// least one labeled and one unlabeled sample per group.
void split_labeled(const std::vector<std::vector<int>>& groups, long want_labeled, bool min_each,
                   std::vector<int>& labeled, std::vector<int>& unlabeled) {
    std::vector<double> weights;
    weights.reserve(groups.size());
    for (const auto& g : groups) weights.push_back(static_cast<double>(g.size()));
    auto quota = proportional_quotas(want_labeled, weights, min_each);
    for (std::size_t i = 0; i < groups.size(); ++i) {
        long lab = quota[i];
        const long have = static_cast<long>(groups[i].size());
        if (min_each && have >= 2) lab = std::min(lab, have - 1);
        lab = std::min(lab, have);
        labeled.insert(labeled.end(), groups[i].begin(), groups[i].begin() + lab);
        unlabeled.insert(unlabeled.end(), groups[i].begin() + lab, groups[i].end());
    }
}

void validate_spec(const Dataset& data, const PartitionSpec& spec) {
    if (spec.clients < 1) throw ConfigError("partition: clients must be >= 1");
    if (spec.gamma <= 0.0 || spec.gamma >= 1.0) {
        throw ConfigError("partition: gamma must be in (0,1)");
    }
    const bool server_side = spec.setting == Setting::LsIID || spec.setting == Setting::LsNonIID;
    if (server_side != (spec.scenario == Scenario::LabelsAtServer)) {
        throw ScenarioError("partition: setting " + to_string(spec.setting) +
                            " is incompatible with scenario " + to_string(spec.scenario));
    }
    if (data.size() < spec.clients) throw PartitionError("partition: fewer samples than clients");
    if (spec.scenario == Scenario::LabelsAtClient) {
        const double per_client = static_cast<double>(data.size()) / spec.clients;
        if (spec.gamma * per_client < 1.0 && spec.setting != Setting::NonIID3) {
            throw PartitionError("partition: gamma*(|D|/K) < 1, no labeled data per client");
        }
    }
}

}  // namespace

Dataset gen_synthetic_blobs(int classes, int dim, int n_per_class, double spread,
                            std::uint64_t seed) {
    if (classes < 2 || dim < 2) throw ConfigError("blobs: need classes >= 2 and dim >= 2");
    if (dim < classes) throw ConfigError("blobs: need dim >= classes for simplex means");
    if (n_per_class < 1) throw ConfigError("blobs: n_per_class must be >= 1");
    if (spread < 0.0) throw ConfigError("blobs: spread must be >= 0");

    Dataset data;
    data.classes = classes;
    data.features = Matrix(classes * n_per_class, dim);
    data.labels.resize(static_cast<std::size_t>(classes) * n_per_class);
    Rng rng = Rng::stream(seed, 0x626c6f62 /* "blob" */);
    int row = 0;
    for (int c = 0; c < classes; ++c) {
        for (int i = 0; i < n_per_class; ++i, ++row) {
            double* f = data.features.row_ptr(row);
            for (int d = 0; d < dim; ++d) {
                f[d] = (d == c ? 1.0 : 0.0);
                if (spread > 0.0) f[d] += spread * rng.normal();
            }
            data.labels[static_cast<std::size_t>(row)] = c;
        }
    }
    return data;
}

Dataset load_csv_dataset(const std::string& path, const CsvOptions& opts) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open dataset file: " + path);

    Dataset data;
    std::vector<double> values;
    std::string line;
    int line_no = 0;
    int dim = -1;
    int max_label = -1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line_no == 1 && opts.has_header) continue;
        if (line.empty()) continue;
        std::vector<double> row;
        const char* p = line.c_str();
        const char* end = p + line.size();
        while (p < end) {
            char* next = nullptr;
            const double v = std::strtod(p, &next);
            if (next == p) {
                throw ParseError(path + ": line " + std::to_string(line_no) +
                                 ": non-numeric field");
            }
            row.push_back(v);
            p = next;
            if (p < end) {
                if (*p != ',') {
                    throw ParseError(path + ": line " + std::to_string(line_no) +
                                     ": expected ',' separator");
                }
                ++p;
            }
        }
        if (row.size() < 2) {
            throw ParseError(path + ": line " + std::to_string(line_no) +
                             ": need a label and at least one feature");
        }
        const double lab = row.front();
        if (lab != std::floor(lab) || lab < 0.0) {
            throw ParseError(path + ": line " + std::to_string(line_no) +
                             ": label must be a non-negative integer");
        }
        if (dim < 0) {
            dim = static_cast<int>(row.size()) - 1;
        } else if (static_cast<int>(row.size()) - 1 != dim) {
            throw ShapeError(path + ": line " + std::to_string(line_no) + ": expected " +
                             std::to_string(dim) + " features, got " +
                             std::to_string(row.size() - 1));
        }
        data.labels.push_back(static_cast<int>(lab));
        max_label = std::max(max_label, static_cast<int>(lab));
        values.insert(values.end(), row.begin() + 1, row.end());
    }
    if (data.labels.empty()) throw ParseError(path + ": no data rows");

    data.classes = max_label + 1;
    data.features.rows = static_cast<int>(data.labels.size());
    data.features.cols = dim;
    data.features.data = std::move(values);

    std::vector<bool> seen(static_cast<std::size_t>(data.classes), false);
    for (int y : data.labels) seen[static_cast<std::size_t>(y)] = true;
    for (int c = 0; c < data.classes; ++c) {
        if (!seen[static_cast<std::size_t>(c)]) {
            throw ParseError(path + ": class " + std::to_string(c) + " has no samples");
        }
    }

    if (opts.normalize) {
        double lo = data.features.data.front();
        double hi = lo;
        for (double v : data.features.data) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        if (hi > lo) {
            for (double& v : data.features.data) v = (v - lo) / (hi - lo);
        }
    }
    return data;
}

Matrix perturb(const Matrix& features, Rng& rng, double strength) {
    if (strength < 0.0) throw ConfigError("perturb: strength must be >= 0");
    Matrix out = features;
    if (strength == 0.0) return out;
    for (double& v : out.data) v += strength * rng.normal();
    return out;
}

PartitionResult partition(const Dataset& data, const PartitionSpec& spec) {
    validate_spec(data, spec);
    Rng rng = Rng::stream(spec.seed, 0x70617274 /* "part" */);
    ClassPools pools = make_pools(data, rng);
    const int K = spec.clients;
    const int C = data.classes;

    PartitionResult result;
    result.shards.resize(static_cast<std::size_t>(K));
    for (int k = 0; k < K; ++k) result.shards[static_cast<std::size_t>(k)].client_id = k;

    switch (spec.setting) {
        case Setting::IID:
        case Setting::NonIID3: {
            const auto sizes = even_sizes(data.size(), K);
            std::vector<long> lab_counts;
            if (spec.setting == Setting::IID) {
                lab_counts = labeled_counts(sizes, spec.gamma);
            } else {
                // 10% of clients hold 55% labeled data, the rest 5%.
                const long n_hi = std::max<long>(1, std::llround(0.10 * K));
                lab_counts.resize(static_cast<std::size_t>(K));
                for (int k = 0; k < K; ++k) {
                    const double ratio = k < n_hi ? 0.55 : 0.05;
                    lab_counts[static_cast<std::size_t>(k)] = std::max<long>(
                        1, std::llround(ratio * static_cast<double>(sizes[static_cast<std::size_t>(k)])));
                }
            }
            for (int k = 0; k < K; ++k) {
                std::vector<double> weights(static_cast<std::size_t>(C));
                for (int c = 0; c < C; ++c) weights[static_cast<std::size_t>(c)] =
                    static_cast<double>(pools.remaining(c));
                auto quota = proportional_quotas(sizes[static_cast<std::size_t>(k)], weights, true);
                std::vector<int> mine;
                for (int c = 0; c < C; ++c) {
                    auto taken = pools.take(c, quota[static_cast<std::size_t>(c)]);
                    mine.insert(mine.end(), taken.begin(), taken.end());
                }
                Rng local = Rng::stream(spec.seed, 0x6c616265 /* "labe" */, static_cast<std::uint64_t>(k));
                local.shuffle(mine);
                const long n_lab = std::min<long>(lab_counts[static_cast<std::size_t>(k)],
                                                  static_cast<long>(mine.size()));
                std::vector<int> labeled(mine.begin(), mine.begin() + n_lab);
                std::vector<int> unlabeled(mine.begin() + n_lab, mine.end());
                fill_shard(result.shards[static_cast<std::size_t>(k)], data, labeled, unlabeled);
            }
            break;
        }
        case Setting::NonIID1: {
            const auto sizes = even_sizes(data.size(), K);
            const auto lab_counts = labeled_counts(sizes, spec.gamma);
            const auto classes = assign_client_classes(K, C, spec.classes_per_client, rng);
            for (int k = 0; k < K; ++k) {
                const auto& mine = classes[static_cast<std::size_t>(k)];
                std::vector<double> weights(mine.size(), 1.0);
                auto quota = proportional_quotas(sizes[static_cast<std::size_t>(k)], weights, true);
                std::vector<std::vector<int>> groups;
                for (std::size_t i = 0; i < mine.size(); ++i) {
                    groups.push_back(pools.take(mine[i], quota[i]));
                }
                std::vector<int> labeled, unlabeled;
                split_labeled(groups, lab_counts[static_cast<std::size_t>(k)], true, labeled,
                              unlabeled);
                fill_shard(result.shards[static_cast<std::size_t>(k)], data, labeled, unlabeled);
            }
            break;
        }
        case Setting::NonIID2: {
            const auto sizes = even_sizes(data.size(), K);
            const auto lab_counts = labeled_counts(sizes, spec.gamma);
            const auto classes = assign_client_classes(K, C, spec.classes_per_client, rng);
            for (int k = 0; k < K; ++k) {
                const auto& mine = classes[static_cast<std::size_t>(k)];
                const long n_lab = std::max<long>(lab_counts[static_cast<std::size_t>(k)],
                                                  static_cast<long>(mine.size()));
                std::vector<double> lw(mine.size(), 1.0);
                auto lab_quota = proportional_quotas(n_lab, lw, true);
                std::vector<int> labeled;
                for (std::size_t i = 0; i < mine.size(); ++i) {
                    auto taken = pools.take(mine[i], lab_quota[i]);
                    labeled.insert(labeled.end(), taken.begin(), taken.end());
                }
                const long n_unl = sizes[static_cast<std::size_t>(k)] - n_lab;
                std::vector<double> weights(static_cast<std::size_t>(C));
                for (int c = 0; c < C; ++c) weights[static_cast<std::size_t>(c)] =
                    static_cast<double>(pools.remaining(c));
                auto quota = proportional_quotas(n_unl, weights, true);
                std::vector<int> unlabeled;
                for (int c = 0; c < C; ++c) {
                    auto taken = pools.take(c, quota[static_cast<std::size_t>(c)]);
                    unlabeled.insert(unlabeled.end(), taken.begin(), taken.end());
                }
                fill_shard(result.shards[static_cast<std::size_t>(k)], data, labeled, unlabeled);
            }
            break;
        }
        case Setting::LsIID:
        case Setting::LsNonIID: {
            const long n_server = std::llround(spec.gamma * static_cast<double>(data.size()));
            if (n_server < C) throw PartitionError("labels-at-server: gamma*|D| below class count");
            std::vector<double> weights(static_cast<std::size_t>(C));
            for (int c = 0; c < C; ++c) weights[static_cast<std::size_t>(c)] =
                static_cast<double>(pools.remaining(c));
            auto srv_quota = proportional_quotas(n_server, weights, true);
            ServerPool server;
            for (int c = 0; c < C; ++c) {
                auto taken = pools.take(c, srv_quota[static_cast<std::size_t>(c)]);
                server.idx.insert(server.idx.end(), taken.begin(), taken.end());
            }
            server.x = gather_rows(data, server.idx);
            server.y = gather_labels(data, server.idx);
            result.server_labeled = std::move(server);

            const auto sizes = even_sizes(data.size() - n_server, K);
            if (spec.setting == Setting::LsIID) {
                for (int k = 0; k < K; ++k) {
                    std::vector<double> w(static_cast<std::size_t>(C));
                    for (int c = 0; c < C; ++c) w[static_cast<std::size_t>(c)] =
                        static_cast<double>(pools.remaining(c));
                    auto quota = proportional_quotas(sizes[static_cast<std::size_t>(k)], w, true);
                    std::vector<int> unlabeled;
                    for (int c = 0; c < C; ++c) {
                        auto taken = pools.take(c, quota[static_cast<std::size_t>(c)]);
                        unlabeled.insert(unlabeled.end(), taken.begin(), taken.end());
                    }
                    fill_shard(result.shards[static_cast<std::size_t>(k)], data, {}, unlabeled);
                }
            } else {
                const auto classes = assign_client_classes(K, C, spec.classes_per_client, rng);
                for (int k = 0; k < K; ++k) {
                    const auto& mine = classes[static_cast<std::size_t>(k)];
                    std::vector<double> w(mine.size(), 1.0);
                    auto quota = proportional_quotas(sizes[static_cast<std::size_t>(k)], w, true);
                    std::vector<int> unlabeled;
                    for (std::size_t i = 0; i < mine.size(); ++i) {
                        auto taken = pools.take(mine[i], quota[i]);
                        unlabeled.insert(unlabeled.end(), taken.begin(), taken.end());
                    }
                    fill_shard(result.shards[static_cast<std::size_t>(k)], data, {}, unlabeled);
                }
            }
            break;
        }
    }
    return result;
}

std::string partition_audit_csv(const PartitionResult& parts) {
    std::ostringstream out;
    out << "client_id,n_labeled,n_unlabeled,classes_labeled,classes_unlabeled\n";
    auto class_list = [](const std::vector<int>& labels) {
        std::set<int> classes(labels.begin(), labels.end());
        std::string s;
        for (int c : classes) {
            if (!s.empty()) s += ';';
            s += std::to_string(c);
        }
        return s;
    };
    if (parts.server_labeled) {
        out << "-1," << parts.server_labeled->y.size() << ",0,"
            << class_list(parts.server_labeled->y) << ",\n";
    }
    for (const auto& shard : parts.shards) {
        out << shard.client_id << ',' << shard.labeled_count() << ',' << shard.unlabeled_count()
            << ',' << class_list(shard.labeled_y) << ',' << class_list(shard.unlabeled_audit_y)
            << '\n';
    }
    return out.str();
}

std::string to_string(Scenario s) {
    return s == Scenario::LabelsAtClient ? "labels-at-client" : "labels-at-server";
}

std::string to_string(Setting s) {
    switch (s) {
        case Setting::IID: return "iid";
        case Setting::NonIID1: return "non-iid-i";
        case Setting::NonIID2: return "non-iid-ii";
        case Setting::NonIID3: return "non-iid-iii";
        case Setting::LsIID: return "ls-iid";
        case Setting::LsNonIID: return "ls-non-iid";
    }
    return "?";
}

Scenario scenario_from_string(const std::string& s) {
    if (s == "labels-at-client") return Scenario::LabelsAtClient;
    if (s == "labels-at-server") return Scenario::LabelsAtServer;
    throw ConfigError("unknown scenario: " + s);
}

Setting setting_from_string(const std::string& s) {
    if (s == "iid") return Setting::IID;
    if (s == "non-iid-i") return Setting::NonIID1;
    if (s == "non-iid-ii") return Setting::NonIID2;
    if (s == "non-iid-iii") return Setting::NonIID3;
    if (s == "ls-iid") return Setting::LsIID;
    if (s == "ls-non-iid") return Setting::LsNonIID;
    throw ConfigError("unknown setting: " + s);
}

}  // namespace fedsiam

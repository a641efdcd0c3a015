#pragma once

#include <optional>
#include <string>
#include <vector>

#include "fedsiam/matrix.hpp"
#include "fedsiam/rng.hpp"

namespace fedsiam {

struct Dataset {
    Matrix features;          // [N x dim]
    std::vector<int> labels;  // values in {0..classes-1}, every class present
    int classes = 0;

    int size() const { return features.rows; }
    int dim() const { return features.cols; }
};

enum class Scenario { LabelsAtClient, LabelsAtServer };

enum class Setting { IID, NonIID1, NonIID2, NonIID3, LsIID, LsNonIID };

struct PartitionSpec {
    Scenario scenario = Scenario::LabelsAtClient;
    Setting setting = Setting::IID;
    double gamma = 0.1;          // labeled fraction
    int clients = 100;           // K
    int classes_per_client = 2;  // C' for the category-restricted settings
    std::uint64_t seed = 1234;
};

// One client's slice of the training data. The unlabeled audit labels exist
// only so tests can verify category contracts; no training code reads them.
struct ClientShard {
    int client_id = -1;
    Matrix labeled_x;
    std::vector<int> labeled_y;
    std::vector<int> labeled_idx;  // source indices in the dataset
    Matrix unlabeled_x;
    std::vector<int> unlabeled_idx;
    std::vector<int> unlabeled_audit_y;  // audit only

    int labeled_count() const { return labeled_x.rows; }
    int unlabeled_count() const { return unlabeled_x.rows; }
    int total_count() const { return labeled_count() + unlabeled_count(); }
};

struct ServerPool {
    Matrix x;
    std::vector<int> y;
    std::vector<int> idx;
};

struct PartitionResult {
    std::optional<ServerPool> server_labeled;
    std::vector<ClientShard> shards;
};

// Gaussian blobs with class means at the unit-simplex vertices e_0..e_{C-1}
// (requires dim >= classes); per-class noise sigma = spread. Samples are laid
// out class-major, n_per_class each.
Dataset gen_synthetic_blobs(int classes, int dim, int n_per_class, double spread,
                            std::uint64_t seed);

struct CsvOptions {
    bool has_header = false;
    bool normalize = false;  // min-max scale features into [0,1]
};

// Rows are `label,f1,...,fdim`. Throws ParseError with a 1-based line number
// on malformed rows, ShapeError on inconsistent dimensionality.
Dataset load_csv_dataset(const std::string& path, const CsvOptions& opts = {});

PartitionResult partition(const Dataset& dataset, const PartitionSpec& spec);

// Element-wise additive Gaussian noise x + N(0, strength^2); strength 0 is
// the identity. Each call draws fresh noise from rng.
Matrix perturb(const Matrix& features, Rng& rng, double strength);

// Audit CSV: client_id,n_labeled,n_unlabeled,classes_labeled,classes_unlabeled
// (class lists are ';'-joined). A labels-at-server pool appears as client -1.
std::string partition_audit_csv(const PartitionResult& parts);

std::string to_string(Scenario s);
std::string to_string(Setting s);
Scenario scenario_from_string(const std::string& s);
Setting setting_from_string(const std::string& s);

}  // namespace fedsiam

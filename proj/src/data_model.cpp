#include "agestack/data_model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <stdexcept>

#include "agestack/errors.hpp"
#include "agestack/numio.hpp"

namespace agestack {

namespace {

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw parse_error("cannot open file: " + path);
    std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return content;
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw parse_error("cannot open file for writing: " + path);
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw parse_error("write failed: " + path);
}

std::vector<std::string_view> split_lines(const std::string& content, const std::string& path) {
    if (content.find('\r') != std::string::npos)
        throw parse_error(path + ": CR line endings are not supported (LF only)");
    std::vector<std::string_view> lines;
    std::size_t start = 0;
    while (start < content.size()) {
        std::size_t end = content.find('\n', start);
        if (end == std::string::npos) end = content.size();
        lines.emplace_back(content.data() + start, end - start);
        start = end + 1;
    }
    return lines;
}

std::vector<std::string_view> split_fields(std::string_view line) {
    std::vector<std::string_view> fields;
    std::size_t start = 0;
    for (;;) {
        const std::size_t end = line.find(',', start);
        if (end == std::string_view::npos) {
            fields.push_back(line.substr(start));
            return fields;
        }
        fields.push_back(line.substr(start, end - start));
        start = end + 1;
    }
}

}  // namespace

const std::string& SubjectTable::site() const {
    if (sites.empty()) throw invalid_input_error("empty table has no site label");
    for (const auto& s : sites)
        if (s != sites.front())
            throw invalid_input_error("table mixes site labels; no single site");
    return sites.front();
}

std::vector<std::string> validate_table(const SubjectTable& table) {
    const Eigen::Index n = table.ages.size();
    if (static_cast<Eigen::Index>(table.subject_ids.size()) != n ||
        static_cast<Eigen::Index>(table.sites.size()) != n || table.features.rows() != n)
        throw validation_error("table row counts disagree across fields");
    std::set<std::string> seen;
    for (const auto& id : table.subject_ids)
        if (!seen.insert(id).second)
            throw validation_error("duplicate subject_id: " + id);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double age = table.ages[i];
        if (!std::isfinite(age) || age <= 0.0)
            throw validation_error("age must be finite and > 0 (subject " +
                                   table.subject_ids[static_cast<std::size_t>(i)] + ")");
    }
    if (!table.features.allFinite())
        throw validation_error("features contain non-finite values");

    std::vector<std::string> warnings;
    const Eigen::Index negatives = (table.features.array() < 0.0).count();
    if (negatives > 0)
        warnings.push_back(format_int(negatives) +
                           " negative feature values (volumes are expected nonnegative)");
    return warnings;
}

const std::vector<int>& Parcellation::voxels_of(int r) const {
    if (r < 0 || r >= n_regions) throw std::out_of_range("region id out of range");
    return groups[static_cast<std::size_t>(r)];
}

Parcellation make_parcellation(std::vector<int> region_of) {
    if (region_of.empty()) throw validation_error("parcellation must cover at least one voxel");
    int max_id = -1;
    for (int id : region_of) {
        if (id < 0) throw validation_error("negative region id");
        max_id = std::max(max_id, id);
    }
    Parcellation parc;
    parc.n_regions = max_id + 1;
    parc.groups.resize(static_cast<std::size_t>(parc.n_regions));
    for (std::size_t v = 0; v < region_of.size(); ++v)
        parc.groups[static_cast<std::size_t>(region_of[v])].push_back(static_cast<int>(v));
    for (int r = 0; r < parc.n_regions; ++r)
        if (parc.groups[static_cast<std::size_t>(r)].empty())
            throw validation_error("region ids must be dense 0..R-1; region " + format_int(r) +
                                   " has no voxel");
    parc.region_of = std::move(region_of);
    return parc;
}

std::vector<int> compact_region_ids(const std::vector<int>& raw_ids) {
    std::map<int, int> remap;
    for (int id : raw_ids) remap.emplace(id, 0);
    int next = 0;
    for (auto& [id, dense] : remap) dense = next++;
    std::vector<int> out;
    out.reserve(raw_ids.size());
    for (int id : raw_ids) out.push_back(remap.at(id));
    return out;
}

FoldAssignment kfold_split(const Eigen::VectorXd& ages, int k, std::uint64_t seed) {
    const Eigen::Index n = ages.size();
    if (k < 2) throw invalid_input_error("kfold_split: k must be >= 2");
    if (n < k) throw invalid_input_error("kfold_split: need at least k rows");

    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return ages[a] < ages[b]; });

    FoldAssignment assignment;
    assignment.k = k;
    assignment.fold_of.assign(static_cast<std::size_t>(n), 0);

    Rng rng(mix_seed(seed, "kfold"));
    int counter = 0;
    for (int s = 0; s < k; ++s) {
        const auto lo = static_cast<std::size_t>(static_cast<long long>(s) * n / k);
        const auto hi = static_cast<std::size_t>(static_cast<long long>(s + 1) * n / k);
        std::vector<int> stratum(order.begin() + static_cast<std::ptrdiff_t>(lo),
                                 order.begin() + static_cast<std::ptrdiff_t>(hi));
        rng.shuffle(stratum);
        for (int row : stratum) assignment.fold_of[static_cast<std::size_t>(row)] = counter++ % k;
    }
    return assignment;
}

SubjectTable load_features(const std::string& path) {
    const std::string content = read_file(path);
    const auto lines = split_lines(content, path);
    if (lines.empty()) throw parse_error(path + ": empty file");

    const auto header = split_fields(lines[0]);
    if (header.size() < 4 || header[0] != "subject_id" || header[1] != "site" ||
        header[2] != "age")
        throw parse_error(path + ": header must start with subject_id,site,age,v0,...");
    const std::size_t p = header.size() - 3;
    for (std::size_t j = 0; j < p; ++j) {
        const std::string expected = "v" + format_int(static_cast<long long>(j));
        if (header[j + 3] != expected)
            throw parse_error(path + ": header column " + format_int(j + 3) + " must be " +
                              expected);
    }

    const std::size_t n = lines.size() - 1;
    SubjectTable table;
    table.subject_ids.reserve(n);
    table.sites.reserve(n);
    table.ages.resize(static_cast<Eigen::Index>(n));
    table.features.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(p));

    std::set<std::string, std::less<>> seen;
    for (std::size_t i = 0; i < n; ++i) {
        const std::string row_label = "row " + format_int(i + 2);
        const auto fields = split_fields(lines[i + 1]);
        if (fields.size() != p + 3)
            throw parse_error(path + ": " + row_label + " has " + format_int(fields.size()) +
                              " fields, expected " + format_int(p + 3));
        if (fields[0].empty()) throw parse_error(path + ": " + row_label + " has empty subject_id");
        if (fields[1].empty()) throw parse_error(path + ": " + row_label + " has empty site");
        if (!seen.insert(std::string(fields[0])).second)
            throw parse_error(path + ": duplicate subject_id at " + row_label + ": " +
                              std::string(fields[0]));
        double age;
        if (!parse_double(fields[2], age))
            throw parse_error(path + ": " + row_label + " column age: not a number: " +
                              std::string(fields[2]));
        table.subject_ids.emplace_back(fields[0]);
        table.sites.emplace_back(fields[1]);
        table.ages[static_cast<Eigen::Index>(i)] = age;
        for (std::size_t j = 0; j < p; ++j) {
            double v;
            if (!parse_double(fields[j + 3], v))
                throw parse_error(path + ": " + row_label + " column v" + format_int(j) +
                                  ": not a number: " + std::string(fields[j + 3]));
            table.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v;
        }
    }
    validate_table(table);  // warnings are recomputed by callers that surface them
    return table;
}

void write_features(const SubjectTable& table, const std::string& path) {
    validate_table(table);
    std::string out;
    out.reserve(static_cast<std::size_t>(table.n()) *
                    (static_cast<std::size_t>(table.width()) * 12 + 32) +
                64);
    out += "subject_id,site,age";
    for (Eigen::Index j = 0; j < table.width(); ++j) {
        out += ",v";
        out += format_int(j);
    }
    out += '\n';
    for (Eigen::Index i = 0; i < table.n(); ++i) {
        out += table.subject_ids[static_cast<std::size_t>(i)];
        out += ',';
        out += table.sites[static_cast<std::size_t>(i)];
        out += ',';
        out += format_double(table.ages[i]);
        for (Eigen::Index j = 0; j < table.width(); ++j) {
            out += ',';
            out += format_double(table.features(i, j));
        }
        out += '\n';
    }
    write_file(path, out);
}

Parcellation load_parcellation(const std::string& path) {
    const std::string content = read_file(path);
    const auto lines = split_lines(content, path);
    if (lines.empty()) throw parse_error(path + ": empty file");
    const auto header = split_fields(lines[0]);
    if (header.size() != 2 || header[0] != "voxel_index" || header[1] != "region_id")
        throw parse_error(path + ": header must be voxel_index,region_id");

    const std::size_t p = lines.size() - 1;
    if (p == 0) throw validation_error(path + ": no voxel rows");
    std::vector<int> region_of(p, -1);
    for (std::size_t i = 0; i < p; ++i) {
        const std::string row_label = "row " + format_int(i + 2);
        const auto fields = split_fields(lines[i + 1]);
        if (fields.size() != 2)
            throw parse_error(path + ": " + row_label + " must have 2 fields");
        long long voxel, region;
        if (!parse_int(fields[0], voxel))
            throw parse_error(path + ": " + row_label + " voxel_index: not an integer");
        if (!parse_int(fields[1], region))
            throw parse_error(path + ": " + row_label + " region_id: not an integer");
        if (voxel < 0 || voxel >= static_cast<long long>(p))
            throw validation_error(path + ": voxel indices must cover 0.." + format_int(p - 1) +
                                   " exactly once; got " + format_int(voxel));
        if (region_of[static_cast<std::size_t>(voxel)] != -1)
            throw validation_error(path + ": duplicate voxel_index " + format_int(voxel));
        if (region < 0 || region > static_cast<long long>(1 << 30))
            throw validation_error(path + ": region_id out of range at " + row_label);
        region_of[static_cast<std::size_t>(voxel)] = static_cast<int>(region);
    }
    return make_parcellation(std::move(region_of));
}

void write_parcellation(const Parcellation& parcellation, const std::string& path) {
    std::string out = "voxel_index,region_id\n";
    for (std::size_t v = 0; v < parcellation.region_of.size(); ++v) {
        out += format_int(v);
        out += ',';
        out += format_int(parcellation.region_of[v]);
        out += '\n';
    }
    write_file(path, out);
}

Eigen::MatrixXd region_view(const SubjectTable& table, const Parcellation& parcellation, int r) {
    if (table.width() != parcellation.width())
        throw shape_error("region_view: table width does not match parcellation");
    const auto& voxels = parcellation.voxels_of(r);
    Eigen::MatrixXd out(table.n(), static_cast<Eigen::Index>(voxels.size()));
    for (std::size_t c = 0; c < voxels.size(); ++c)
        out.col(static_cast<Eigen::Index>(c)) = table.features.col(voxels[c]);
    return out;
}

Eigen::MatrixXd region_means(const Eigen::MatrixXd& features, const Parcellation& parcellation) {
    if (features.cols() != parcellation.width())
        throw shape_error("region_means: width does not match parcellation");
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(features.rows(), parcellation.n_regions);
    for (int r = 0; r < parcellation.n_regions; ++r) {
        const auto& voxels = parcellation.voxels_of(r);
        for (int v : voxels) out.col(r) += features.col(v);
        out.col(r) /= static_cast<double>(voxels.size());
    }
    return out;
}

Eigen::MatrixXd region_means(const SubjectTable& table, const Parcellation& parcellation) {
    return region_means(table.features, parcellation);
}

SubjectTable pool_tables(const std::vector<SubjectTable>& tables) {
    if (tables.empty()) throw invalid_input_error("pool_tables: empty table list");
    std::vector<std::size_t> order(tables.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return tables[a].site() < tables[b].site();
    });
    for (std::size_t i = 1; i < order.size(); ++i)
        if (tables[order[i - 1]].site() == tables[order[i]].site())
            throw invalid_input_error("pool_tables: duplicate site label " +
                                      tables[order[i]].site());

    const Eigen::Index width = tables[0].width();
    Eigen::Index total = 0;
    for (const auto& t : tables) {
        if (t.width() != width) throw shape_error("pool_tables: feature widths disagree");
        total += t.n();
    }

    SubjectTable pooled;
    pooled.subject_ids.reserve(static_cast<std::size_t>(total));
    pooled.sites.reserve(static_cast<std::size_t>(total));
    pooled.ages.resize(total);
    pooled.features.resize(total, width);
    Eigen::Index row = 0;
    for (std::size_t idx : order) {
        const SubjectTable& t = tables[idx];
        pooled.subject_ids.insert(pooled.subject_ids.end(), t.subject_ids.begin(),
                                  t.subject_ids.end());
        pooled.sites.insert(pooled.sites.end(), t.sites.begin(), t.sites.end());
        pooled.ages.segment(row, t.n()) = t.ages;
        pooled.features.middleRows(row, t.n()) = t.features;
        row += t.n();
    }
    validate_table(pooled);  // also rejects subject ids shared across tables
    return pooled;
}

Digest128 table_digest(const SubjectTable& table) {
    Hasher h;
    h.str("subject_table");
    h.i64(table.n()).i64(table.width());
    for (const auto& id : table.subject_ids) h.str(id);
    for (const auto& s : table.sites) h.str(s);
    h.f64s(table.ages.data(), static_cast<std::size_t>(table.ages.size()));
    h.f64s(table.features.data(), static_cast<std::size_t>(table.features.size()));
    return h.digest();
}

Digest128 parcellation_digest(const Parcellation& parcellation) {
    Hasher h;
    h.str("parcellation");
    h.i64(parcellation.n_regions);
    for (int id : parcellation.region_of) h.i64(id);
    return h.digest();
}

}  // namespace agestack

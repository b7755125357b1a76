#include "dmvt/manifest.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

namespace dmvt {

namespace {

namespace fs = std::filesystem;

constexpr const char *kHeader = "id,age,sex,diagnosis,mri_path,pet_path";

std::string loc(const std::string &path, size_t line) {
    return path + ":" + std::to_string(line) + ": ";
}

std::vector<std::string> split_fields(const std::string &line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

void check_field(const std::string &value, const char *what) {
    if (value.find(',') != std::string::npos || value.find('\n') != std::string::npos) {
        throw ContractError(std::string(what) + " may not contain commas or newlines: " + value);
    }
}

// Strips a trailing carriage return so CRLF manifests parse.
std::string chomp(std::string line) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return line;
}

std::string resolve(const std::string &base_dir, const std::string &p) {
    fs::path fp(p);
    if (fp.is_absolute()) return fp.string();
    return (fs::path(base_dir) / fp).string();
}

}  // namespace

std::vector<std::string> load_labels(const std::string &path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open labels file: " + path);
    std::vector<std::string> labels;
    std::set<std::string> seen;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        line = chomp(line);
        if (line.empty()) throw ParseError(loc(path, lineno) + "empty label");
        if (!seen.insert(line).second) {
            throw ParseError(loc(path, lineno) + "duplicate label: " + line);
        }
        labels.push_back(line);
    }
    if (labels.empty()) throw ParseError(path + ": no labels");
    return labels;
}

void write_labels(const std::string &path, const std::vector<std::string> &labels) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open labels file for writing: " + path);
    for (const auto &l : labels) {
        check_field(l, "label");
        out << l << "\n";
    }
    if (!out) throw IoError("write failure on " + path);
}

std::vector<SubjectRecord> load_manifest(const std::string &path,
                                         const std::vector<std::string> &labels) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open manifest: " + path);
    std::string base_dir = fs::path(path).parent_path().string();
    if (base_dir.empty()) base_dir = ".";

    std::string line;
    size_t lineno = 0;
    if (!std::getline(in, line)) throw ParseError(path + ": empty manifest");
    ++lineno;
    if (chomp(line) != kHeader) {
        throw ParseError(loc(path, lineno) + "expected header '" + kHeader + "'");
    }

    std::vector<SubjectRecord> records;
    std::set<std::string> ids;
    while (std::getline(in, line)) {
        ++lineno;
        line = chomp(line);
        if (line.empty()) continue;
        auto fields = split_fields(line);
        if (fields.size() != 6) {
            throw ParseError(loc(path, lineno) + "expected 6 fields, got " +
                             std::to_string(fields.size()));
        }
        SubjectRecord r;
        r.id = fields[0];
        if (r.id.empty()) throw ParseError(loc(path, lineno) + "empty id");
        if (!ids.insert(r.id).second) {
            throw ParseError(loc(path, lineno) + "duplicate id: " + r.id);
        }

        try {
            size_t used = 0;
            r.age = std::stod(fields[1], &used);
            if (used != fields[1].size()) throw std::invalid_argument("trailing junk");
        } catch (const std::exception &) {
            throw ParseError(loc(path, lineno) + "bad age: '" + fields[1] + "'");
        }
        if (!(r.age > 0.0 && r.age < 120.0)) {
            throw ParseError(loc(path, lineno) + "age out of range (0,120): " + fields[1]);
        }

        if (fields[2] == "F") {
            r.sex = Sex::female;
        } else if (fields[2] == "M") {
            r.sex = Sex::male;
        } else {
            throw ParseError(loc(path, lineno) + "sex must be F or M, got '" + fields[2] + "'");
        }

        auto it = std::find(labels.begin(), labels.end(), fields[3]);
        if (it == labels.end()) {
            throw ParseError(loc(path, lineno) + "unknown diagnosis label: '" + fields[3] + "'");
        }
        r.diagnosis = it - labels.begin();

        if (fields[4].empty() || fields[5].empty()) {
            throw ParseError(loc(path, lineno) + "empty volume path");
        }
        r.mri_path = resolve(base_dir, fields[4]);
        r.pet_path = resolve(base_dir, fields[5]);
        for (const std::string *p : {&r.mri_path, &r.pet_path}) {
            if (!fs::exists(*p)) {
                throw IoError(loc(path, lineno) + "volume file not found: " + *p);
            }
        }
        records.push_back(std::move(r));
    }
    return records;
}

void write_manifest(const std::string &path, const std::vector<SubjectRecord> &records,
                    const std::vector<std::string> &labels) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open manifest for writing: " + path);
    out << kHeader << "\n";
    for (const auto &r : records) {
        if (r.diagnosis < 0 || r.diagnosis >= int64_t(labels.size())) {
            throw ContractError("record " + r.id + " has diagnosis index " +
                                std::to_string(r.diagnosis) + " outside the labels list");
        }
        check_field(r.id, "id");
        check_field(r.mri_path, "mri_path");
        check_field(r.pet_path, "pet_path");
        std::ostringstream age;
        age << r.age;
        out << r.id << ',' << age.str() << ',' << (r.sex == Sex::female ? 'F' : 'M') << ','
            << labels[size_t(r.diagnosis)] << ',' << r.mri_path << ',' << r.pet_path << "\n";
    }
    if (!out) throw IoError("write failure on " + path);
}

}  // namespace dmvt

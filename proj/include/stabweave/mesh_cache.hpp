#pragma once

#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "stabweave/core.hpp"
#include "stabweave/mesh.hpp"

namespace stabweave {

// One frame's worth of estimated control motions, as cached on disk. Frame
// indices are 1-based; temporal motions of the first frame are all-zero by
// convention.
struct MeshCacheFrame {
    int t = 1;
    ControlMotions m_spatial_ref, m_spatial_tgt;
    ControlMotions m_temporal_ref, m_temporal_tgt;
};

struct MeshCache {
    GridSpec grid;
    double beta = 0.5;
    std::vector<MeshCacheFrame> frames;
};

namespace detail {

inline nlohmann::json motions_to_json(const ControlMotions& m) {
    nlohmann::json arr = nlohmann::json::array();
    for (const Vec2& p : m.v) arr.push_back({p.x, p.y});
    return arr;
}

inline ControlMotions motions_from_json(const nlohmann::json& arr, const GridSpec& spec,
                                        const char* field) {
    if (!arr.is_array())
        throw SchemaMismatch(std::string("mesh cache: ") + field + " is not an array");
    ControlMotions m(spec.rows, spec.cols);
    if (arr.size() != m.count())
        throw ShapeMismatch(std::string("mesh cache: ") + field + " has " +
                            std::to_string(arr.size()) + " entries, grid needs " +
                            std::to_string(m.count()));
    for (size_t k = 0; k < m.count(); ++k) {
        const auto& e = arr[k];
        if (!e.is_array() || e.size() != 2 || !e[0].is_number() || !e[1].is_number())
            throw SchemaMismatch(std::string("mesh cache: ") + field +
                                 " entries must be [x, y] numbers");
        m.v[k] = {e[0].get<double>(), e[1].get<double>()};
    }
    return m;
}

}  // namespace detail

inline void write_mesh_cache(const std::string& path, const MeshCache& cache) {
    nlohmann::json j;
    j["grid"] = {cache.grid.rows, cache.grid.cols};
    j["image_size"] = {cache.grid.size.width, cache.grid.size.height};
    j["beta"] = cache.beta;
    nlohmann::json frames = nlohmann::json::array();
    for (const MeshCacheFrame& f : cache.frames) {
        nlohmann::json fj;
        fj["t"] = f.t;
        fj["m_spatial_ref"] = detail::motions_to_json(f.m_spatial_ref);
        fj["m_spatial_tgt"] = detail::motions_to_json(f.m_spatial_tgt);
        fj["m_temporal_ref"] = detail::motions_to_json(f.m_temporal_ref);
        fj["m_temporal_tgt"] = detail::motions_to_json(f.m_temporal_tgt);
        frames.push_back(std::move(fj));
    }
    j["frames"] = std::move(frames);
    std::ofstream out(path);
    if (!out) throw Error("cannot open " + path + " for writing");
    out << j.dump(1) << "\n";
    if (!out) throw Error("failed writing " + path);
}

inline MeshCache read_mesh_cache(const std::string& path, const GridSpec& expected) {
    expected.validate();
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw SchemaMismatch(std::string("mesh cache: invalid JSON: ") + e.what());
    }
    for (const char* key : {"grid", "image_size", "beta", "frames"})
        if (!j.contains(key))
            throw SchemaMismatch(std::string("mesh cache: missing key \"") + key + "\"");
    if (!j["grid"].is_array() || j["grid"].size() != 2 || !j["image_size"].is_array() ||
        j["image_size"].size() != 2 || !j["beta"].is_number() || !j["frames"].is_array())
        throw SchemaMismatch("mesh cache: malformed header fields");

    MeshCache cache;
    cache.grid.rows = j["grid"][0].get<int>();
    cache.grid.cols = j["grid"][1].get<int>();
    cache.grid.size = {j["image_size"][0].get<int>(), j["image_size"][1].get<int>()};
    cache.beta = j["beta"].get<double>();
    if (cache.grid.rows != expected.rows || cache.grid.cols != expected.cols)
        throw ShapeMismatch("mesh cache: grid " + std::to_string(cache.grid.rows) + "x" +
                            std::to_string(cache.grid.cols) + " does not match configured " +
                            std::to_string(expected.rows) + "x" + std::to_string(expected.cols));
    if (!(cache.grid.size == expected.size))
        throw ShapeMismatch("mesh cache: image size does not match configured size");

    int expect_t = 1;
    for (const auto& fj : j["frames"]) {
        if (!fj.is_object() || !fj.contains("t") || !fj["t"].is_number_integer())
            throw SchemaMismatch("mesh cache: frame entries need an integer \"t\"");
        MeshCacheFrame f;
        f.t = fj["t"].get<int>();
        if (f.t != expect_t)
            throw SchemaMismatch("mesh cache: frame indices must run 1..T, got t=" +
                                 std::to_string(f.t) + " where " + std::to_string(expect_t) +
                                 " was expected");
        ++expect_t;
        for (const char* key : {"m_spatial_ref", "m_spatial_tgt"})
            if (!fj.contains(key))
                throw SchemaMismatch(std::string("mesh cache: frame ") + std::to_string(f.t) +
                                     " missing \"" + key + "\"");
        f.m_spatial_ref = detail::motions_from_json(fj["m_spatial_ref"], expected, "m_spatial_ref");
        f.m_spatial_tgt = detail::motions_from_json(fj["m_spatial_tgt"], expected, "m_spatial_tgt");
        bool has_temporal = fj.contains("m_temporal_ref") && fj.contains("m_temporal_tgt");
        if (!has_temporal) {
            if (f.t >= 2)
                throw SchemaMismatch("mesh cache: frame " + std::to_string(f.t) +
                                     " missing temporal motions");
            f.m_temporal_ref = ControlMotions(expected.rows, expected.cols);
            f.m_temporal_tgt = ControlMotions(expected.rows, expected.cols);
        } else {
            f.m_temporal_ref =
                detail::motions_from_json(fj["m_temporal_ref"], expected, "m_temporal_ref");
            f.m_temporal_tgt =
                detail::motions_from_json(fj["m_temporal_tgt"], expected, "m_temporal_tgt");
            if (f.t == 1)
                for (const ControlMotions* m : {&f.m_temporal_ref, &f.m_temporal_tgt})
                    for (const Vec2& p : m->v)
                        if (p.x != 0.0 || p.y != 0.0)
                            throw SchemaMismatch(
                                "mesh cache: temporal motions at t=1 must be all-zero");
        }
        cache.frames.push_back(std::move(f));
    }
    return cache;
}

}  // namespace stabweave

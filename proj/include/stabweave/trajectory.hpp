#pragma once

#include <vector>

#include "stabweave/core.hpp"
#include "stabweave/image.hpp"
#include "stabweave/mesh.hpp"

namespace stabweave {

using StitchingMotion = GridField;  // relative per-vertex motion at one time step

// Cumulative per-control-point positions; S[0] corresponds to t=1 and is zero.
struct Trajectory {
    std::vector<GridField> S;

    const GridField& at(int t) const { return S[static_cast<size_t>(t) - 1]; }  // 1-based
    int length() const { return static_cast<int>(S.size()); }
};

namespace detail {

inline Trajectory chain(const std::vector<GridField>& motions, const char* what) {
    if (motions.empty()) throw Error(std::string(what) + ": empty motion list");
    for (const Vec2& p : motions.front().v)
        if (p.x != 0.0 || p.y != 0.0)
            throw Error(std::string(what) + ": first motion must be all-zero");
    Trajectory traj;
    GridField acc = motions.front();
    traj.S.push_back(acc);
    for (size_t t = 1; t < motions.size(); ++t) {
        if (!acc.same_shape(motions[t]))
            throw ShapeMismatch(std::string(what) + ": motion grids differ in shape");
        acc += motions[t];
        traj.S.push_back(acc);
    }
    return traj;
}

}  // namespace detail

// Camera trajectory: running sum of temporal motions, C(t) = sum of m^T(1..t).
inline Trajectory camera_trajectory(const std::vector<ControlMotions>& temporal) {
    return detail::chain(temporal, "camera_trajectory");
}

// Relative stitching motion at one time step: carry the previous spatial mesh
// forward through this step's temporal warp (a TPS fitted from the rigid grid
// onto the previous spatial mesh, evaluated at the temporal mesh vertices) and
// subtract the spatial mesh actually estimated for the current frame.
inline StitchingMotion stitching_motion(const Mesh& mesh_temporal, const Mesh& mesh_spatial_prev,
                                        const Mesh& mesh_spatial_cur, const GridSpec& spec) {
    require_shape(mesh_temporal, spec, "stitching_motion temporal mesh");
    require_shape(mesh_spatial_prev, spec, "stitching_motion previous spatial mesh");
    require_shape(mesh_spatial_cur, spec, "stitching_motion current spatial mesh");
    const Mesh rig = rigid_mesh(spec);
    TpsCoefficients warp = tps_fit(rig.v, mesh_spatial_prev.v);
    std::vector<Vec2> carried = tps_eval(warp, mesh_temporal.v);
    StitchingMotion s(spec.rows, spec.cols);
    for (size_t k = 0; k < s.v.size(); ++k) s.v[k] = carried[k] - mesh_spatial_cur.v[k];
    return s;
}

// Stitching trajectory: running sum of relative stitching motions.
inline Trajectory chain_stitching(const std::vector<StitchingMotion>& motions) {
    return detail::chain(motions, "chain_stitching");
}

// Sliding window handed to the smoother: N consecutive frames' raw stitching
// trajectories (re-based so the first position is zero), their spatial meshes,
// the last frame pair for photometric alignment, and the previous windows'
// committed smoothed positions expressed in the same re-based coordinates.
struct TrajectoryWindow {
    int xi = 0;  // absolute index of the window's last frame (1-based)
    int n = 7;
    std::vector<GridField> s_ref, s_tgt;  // re-based positions, relative t = 1..N
    std::vector<Mesh> mesh_ref, mesh_tgt;  // spatial meshes M^S at those frames
    // anchor[t-1] is the committed smoothed position at relative time t
    // (defined for t = 1..N-1; the window's last frame is new).
    std::vector<GridField> anchor_ref, anchor_tgt;
    std::vector<char> anchor_valid;
    // Absolute trajectory value at the window's first frame; re-based
    // positions plus this recover absolute positions.
    GridField base_ref, base_tgt;
    Image frame_ref, frame_tgt;  // last-frame image pair
};

inline TrajectoryWindow build_window(int xi, int n, const Trajectory& traj_ref,
                                     const Trajectory& traj_tgt,
                                     const std::vector<Mesh>& meshes_ref,
                                     const std::vector<Mesh>& meshes_tgt,
                                     const std::vector<GridField>& committed_ref,
                                     const std::vector<GridField>& committed_tgt,
                                     const Image& frame_ref, const Image& frame_tgt) {
    if (n < 3 || n % 2 == 0) throw Error("window length must be odd and at least 3");
    if (xi < n)
        throw MissingHistory("window ending at frame " + std::to_string(xi) +
                             " needs " + std::to_string(n) + " frames");
    if (traj_ref.length() < xi || traj_tgt.length() < xi ||
        static_cast<int>(meshes_ref.size()) < xi || static_cast<int>(meshes_tgt.size()) < xi)
        throw MissingHistory("trajectory caches do not cover the window");

    TrajectoryWindow w;
    w.xi = xi;
    w.n = n;
    const GridField& base_ref = traj_ref.at(xi - n + 1);
    const GridField& base_tgt = traj_tgt.at(xi - n + 1);
    for (int t = 1; t <= n; ++t) {
        int abs_t = xi - n + t;
        w.s_ref.push_back(traj_ref.at(abs_t) - base_ref);
        w.s_tgt.push_back(traj_tgt.at(abs_t) - base_tgt);
        w.mesh_ref.push_back(meshes_ref[static_cast<size_t>(abs_t) - 1]);
        w.mesh_tgt.push_back(meshes_tgt[static_cast<size_t>(abs_t) - 1]);
    }
    for (int t = 1; t <= n - 1; ++t) {
        int abs_t = xi - n + t;
        bool have = static_cast<int>(committed_ref.size()) >= abs_t &&
                    static_cast<int>(committed_tgt.size()) >= abs_t &&
                    committed_ref[static_cast<size_t>(abs_t) - 1].count() > 0 &&
                    committed_tgt[static_cast<size_t>(abs_t) - 1].count() > 0;
        w.anchor_valid.push_back(have ? 1 : 0);
        if (have) {
            w.anchor_ref.push_back(committed_ref[static_cast<size_t>(abs_t) - 1] - base_ref);
            w.anchor_tgt.push_back(committed_tgt[static_cast<size_t>(abs_t) - 1] - base_tgt);
        } else {
            w.anchor_ref.emplace_back();
            w.anchor_tgt.emplace_back();
        }
    }
    w.base_ref = base_ref;
    w.base_tgt = base_tgt;
    w.frame_ref = frame_ref;
    w.frame_tgt = frame_tgt;
    return w;
}

}  // namespace stabweave

// JSON encodings of the toolkit's data types. Units are mm and degrees
// throughout; transforms are row-major 4x4 arrays under "matrix".

#pragma once

#include <string>

#include <json.hpp>

#include "ablreg/calibration.hpp"
#include "ablreg/metrics.hpp"
#include "ablreg/point_cloud.hpp"
#include "ablreg/slice_to_volume.hpp"
#include "ablreg/tps.hpp"

namespace ablreg {

using Json = nlohmann::json;

Json vec_to_json(const Vec3& v);
Json vec_to_json(const Vec2& v);
Vec3 vec3_from_json(const Json& j);
Vec2 vec2_from_json(const Json& j);
Json matrix_to_json(const RigidTransform3D& t);  // [[4], [4], [4], [4]]
RigidTransform3D matrix_from_json(const Json& j);

void to_json(Json& j, const RigidTransform3D& t);
void from_json(const Json& j, RigidTransform3D& t);
void to_json(Json& j, const PoseError& e);

void to_json(Json& j, const DhChain& c);
void from_json(const Json& j, DhChain& c);
void to_json(Json& j, const ZBarFiducial& f);
void from_json(const Json& j, ZBarFiducial& f);
void to_json(Json& j, const ZBarObservation& o);
void from_json(const Json& j, ZBarObservation& o);
void to_json(Json& j, const CalibrationSession& s);
void from_json(const Json& j, CalibrationSession& s);

void to_json(Json& j, const PointCloud& p);
void from_json(const Json& j, PointCloud& p);
void to_json(Json& j, const CpdDiagnostics& d);

/// Only sources, targets and lambda are stored; reading refits.
void to_json(Json& j, const TpsWarp& w);
void from_json(const Json& j, TpsWarp& w);
void to_json(Json& j, const ControlPointSet& s);
void from_json(const Json& j, ControlPointSet& s);
void to_json(Json& j, const OrientedBox& b);
void from_json(const Json& j, OrientedBox& b);

void to_json(Json& j, const Centerline& c);
void from_json(const Json& j, Centerline& c);
void to_json(Json& j, const LandmarkSet& l);
void from_json(const Json& j, LandmarkSet& l);
void to_json(Json& j, const DistanceStats& s);

void to_json(Json& j, const SlicePose& p);
void from_json(const Json& j, SlicePose& p);
void to_json(Json& j, const S2VResult& r);

Json read_json_file(const std::string& path);
void write_json_file(const std::string& path, const Json& j);

}  // namespace ablreg

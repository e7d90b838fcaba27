//! Random polygonal domains and their grid encodings.

mod encoding;
mod polygon;

pub use encoding::{
    cell_center, coordinate_planes, encode_geometry, rasterize_mask, signed_distance,
    GeometryEncoding, GEOMETRY_CHANNELS, MIN_RESOLUTION,
};
pub use polygon::{
    point_segment_distance, sample_polygon, segments_touch, Family, Point, Polygon, BASE_RADIUS,
    MARGIN, MAX_JITTER,
};

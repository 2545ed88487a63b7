//! Geometry documents: parsing, building and validation never panic, and a
//! built geometry survives a serialization round trip.

#![no_main]

use alterwave::geometry::{validate_assumptions, GeometryDocument};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(doc) = GeometryDocument::from_json_str(text) else {
        return;
    };
    let Ok(geom) = doc.build() else {
        return;
    };
    let _ = validate_assumptions(&geom, 8);
    let again = GeometryDocument::from_geometry(&geom).to_json_string().unwrap();
    GeometryDocument::from_json_str(&again)
        .and_then(|d| d.build())
        .expect("serialized geometry rebuilds");
});

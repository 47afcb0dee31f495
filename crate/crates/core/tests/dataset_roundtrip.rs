mod common;

use common::dataset;

#[test]
fn decode_inverts_render_at_64px() {
    dataset::exhaustive(64, 1);
}

#[test]
fn decode_inverts_render_at_256px() {
    dataset::exhaustive(256, 2);
}

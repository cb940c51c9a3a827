//! Splitting touching nuclei at convexity defects.
//!
//! Two radius-10 disks with centres 16 px apart form one connected blob;
//! the split cuts it at the deepest pair of defects.

use hunis::morph::{self, MorphParams};
use hunis::synth;

fn print_map(map: &hunis::LabelMap) {
    for y in 0..map.height() {
        let row: String = (0..map.width())
            .map(|x| match map.get(x, y) {
                0 => '.',
                id => char::from_digit(id % 36, 36).unwrap_or('#'),
            })
            .collect();
        println!("{row}");
    }
}

fn main() {
    let (mask, disk_area) = synth::dumbbell(10.0, 16.0);
    let blob = morph::label_components(&mask);
    let inst = &morph::instances(&blob)[0];
    println!("one blob: area {}, solidity {:.3} (each disk {disk_area} px)", inst.area, inst.solidity);

    let params = MorphParams::default();
    let split = morph::split_convexity(&blob, &params);
    print_map(&split);
    for inst in morph::instances(&split) {
        println!("instance {}: area {}, solidity {:.3}", inst.id, inst.area, inst.solidity);
    }

    // a single disk is left alone
    let mut single = hunis::LabelMap::new(30, 30);
    for (x, y) in synth::disk_pixels(15.0, 15.0, 10.0, 30, 30) {
        single.set(x, y, 1);
    }
    println!("single disk after split: {} instance(s)", morph::split_convexity(&single, &params).instance_count());
}

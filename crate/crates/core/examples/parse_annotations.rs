//! Read polygon annotations and rasterize them into a label map.
//!
//! `cargo run --example parse_annotations -- annotation.xml WIDTH HEIGHT [out.png]`
//!
//! Without arguments a small inline annotation is used.

use hunis::imageio;

const SAMPLE: &str = r#"<Annotations>
  <Annotation Id="1">
    <Regions>
      <Region Id="1"><Vertices>
        <Vertex X="4" Y="3"/><Vertex X="14" Y="4"/><Vertex X="12" Y="12"/><Vertex X="5" Y="10"/>
      </Vertices></Region>
      <Region Id="2"><Vertices>
        <Vertex X="18" Y="6"/><Vertex X="26" Y="8"/><Vertex X="21" Y="15"/>
      </Vertices></Region>
      <Region Id="3"><Vertices><Vertex X="1" Y="1"/><Vertex X="2" Y="2"/></Vertices></Region>
    </Regions>
  </Annotation>
</Annotations>"#;

fn main() -> hunis::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let (polys, report, w, h) = match args.as_slice() {
        [path, w, h, ..] => {
            let (p, r) = imageio::parse_annotation_xml(path)?;
            (p, r, w.parse().expect("width"), h.parse().expect("height"))
        }
        _ => {
            let (p, r) = imageio::parse_annotation_str(SAMPLE).expect("sample annotation is well formed");
            (p, r, 30, 18)
        }
    };
    println!("{} regions read, {} kept", report.regions_seen, polys.polygons.len());
    for (index, vertices) in &report.skipped {
        println!("skipped region {index}: only {vertices} vertices");
    }
    let map = imageio::rasterize(&polys, w, h);
    for (id, area) in map.areas().iter().enumerate().skip(1) {
        println!("instance {id}: {area} px");
    }
    if w <= 80 {
        for y in 0..h {
            let row: String = (0..w).map(|x| if map.get(x, y) == 0 { '.' } else { char::from(b'0' + (map.get(x, y) % 10) as u8) }).collect();
            println!("{row}");
        }
    }
    if let Some(out) = args.get(3) {
        imageio::write_labelmap(&map, out)?;
        println!("wrote {out}");
    }
    Ok(())
}

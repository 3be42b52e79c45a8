use unseg::diffmath::{Tape, Tensor};
use unseg::segmodel::{build_model, ArchSpec, Prompt};

fn main() {
    let (h, w) = (32usize, 32usize);
    let mut img = Tensor::zeros(&[3, h, w]);
    let ca = [0.85, 0.2, 0.15];
    let cb = [0.1, 0.45, 0.9];
    for c in 0..3 {
        for i in 0..h {
            for j in 0..w {
                img.set3(c, i, j, if j < w / 2 { ca[c] } else { cb[c] });
            }
        }
    }
    let model = build_model(0, ArchSpec::default()).unwrap();
    let tape = Tape::new();
    let iv = tape.constant(img.clone());
    let f = model.encode(&tape, iv).unwrap();
    let e = model.encode_prompt(&tape, f, &Prompt::point(16.0, 8.0), h, w).unwrap();
    let cos = f.cosine_map(e).unwrap().value();
    // print the cosine map row 4 (middle)
    for i in [2usize, 4] {
        let row: Vec<String> = (0..8).map(|j| format!("{:+.2}", cos.at2(i, j))).collect();
        println!("row {}: {}", i, row.join(" "));
    }
    // column profile across the boundary (feature col index 0..8)
    let mid: Vec<String> = (0..8).map(|j| format!("{:+.2}", cos.at2(4, j))).collect();
    println!("profile: {}", mid.join(" "));
    let mask = model.segment(&img, &Prompt::point(16.0, 8.0)).unwrap().binary();
    for i in (0..h).step_by(4) {
        let row: String = (0..w).map(|j| if mask.get(i, j) { '#' } else { '.' }).collect();
        println!("{}", row);
    }
}

use shredrec::compat::{build_cost_matrix, CompatConfig, DistanceForm, ShredEmbeddings};
use shredrec::docproc::*;
use shredrec::metrics::accuracy;
use shredrec::projector::Side;
use shredrec::sampling::*;
use shredrec::solver::solve_heuristic;
use shredrec::synth::{render_page, SynthConfig};
use shredrec::trainer::{train, TrainConfig};
use std::time::Instant;

// full-scale rehearsal of the end-to-end reconstruction check:
// 30 training pages, 5 held-out, d=8, 20 epochs
fn main() {
    let t0 = Instant::now();
    let cfg = SynthConfig::default();
    let seed = 424242u64;
    let mut ds = SampleDataset::new(32, 32);
    let ecfg = ExtractConfig { max_pos: 700, noise_p: 0.0, ..Default::default() };
    for i in 0..30u64 {
        let page = render_page(&cfg, shredrec::rng::derive_seed(seed, i));
        let shreds = shred_page(&page, 30, &format!("train{i:02}"), SAUVOLA_WINDOW, SAUVOLA_K, SAUVOLA_R).unwrap();
        ds.pairs.extend(extract_pairs(&shreds, &ecfg, shredrec::rng::derive_seed(seed + 1, i)).unwrap());
    }
    println!("dataset: {} pairs ({:.0}s)", ds.len(), t0.elapsed().as_secs_f64());
    let (train_set, val_set) = split_train_val(&ds, 4, seed).unwrap();
    println!("train {} val {}", train_set.len(), val_set.len());
    let tcfg = TrainConfig { epochs: 20, lr: 0.1, batch: 64, margin: 2.0, d: 8, seed, ..Default::default() };
    let dir = tempfile::tempdir().unwrap();
    let t1 = Instant::now();
    let (best, records) = train(&train_set, &val_set, &tcfg, dir.path()).unwrap();
    let br = shredrec::trainer::best_record(&records).unwrap();
    println!("train {:.0}s best epoch {} smd {:.3}", t1.elapsed().as_secs_f64(), br.epoch, br.smd);

    let ccfg = CompatConfig { delta_max: 3, distance: DistanceForm::Squared };
    let mut accs = Vec::new();
    let mut all_shreds = Vec::new();
    for i in 100..105u64 {
        let page = render_page(&cfg, shredrec::rng::derive_seed(seed, i));
        let shreds = shred_page(&page, 30, &format!("held{i}"), SAUVOLA_WINDOW, SAUVOLA_K, SAUVOLA_R).unwrap();
        all_shreds.extend(shreds.clone());
        let inst = permute_instance(&ReconstructionInstance::new(shreds), seed + i);
        let h = inst.common_boundary_height();
        let emb: Vec<ShredEmbeddings> = inst.shreds.iter().map(|s| ShredEmbeddings {
            right: best.embed_boundary(Side::Right, &boundary_crop(s, BoundarySide::Right, 32, h).unwrap(), "").unwrap(),
            left: best.embed_boundary(Side::Left, &boundary_crop(s, BoundarySide::Left, 32, h).unwrap(), "").unwrap(),
        }).collect();
        let m = build_cost_matrix(&emb, &ccfg).unwrap();
        let sol = solve_heuristic(&m, seed, 32).unwrap();
        let acc = accuracy(&sol, &inst, false).unwrap();
        println!("page {i}: strict {:.4}", acc);
        accs.push(acc);
    }
    println!("mean strict accuracy: {:.4}", accs.iter().sum::<f64>() / accs.len() as f64);

    // the multi-page mixed instance (criterion-7 shape)
    let inst = permute_instance(&ReconstructionInstance::new(all_shreds), seed + 1000);
    let h = inst.common_boundary_height();
    let emb: Vec<ShredEmbeddings> = inst.shreds.iter().map(|s| ShredEmbeddings {
        right: best.embed_boundary(Side::Right, &boundary_crop(s, BoundarySide::Right, 32, h).unwrap(), "").unwrap(),
        left: best.embed_boundary(Side::Left, &boundary_crop(s, BoundarySide::Left, 32, h).unwrap(), "").unwrap(),
    }).collect();
    let m = build_cost_matrix(&emb, &ccfg).unwrap();
    let sol = solve_heuristic(&m, seed, 32).unwrap();
    println!(
        "mixed 150: strict {:.4} relaxed {:.4}",
        accuracy(&sol, &inst, false).unwrap(),
        accuracy(&sol, &inst, true).unwrap()
    );
    println!("total {:.0}s", t0.elapsed().as_secs_f64());
}

//! The three Euclidean projections on one small weight tensor.
use robustprune::numerics::Tensor;
use robustprune::sparsity::{
    membership, project_column, project_filter, project_irregular, unit_scores, Scheme,
};

fn show(label: &str, t: &Tensor) {
    println!("{label}:");
    for row in t.data().chunks(4) {
        println!("  {row:?}");
    }
}

fn main() -> robustprune::Result<()> {
    // three filters of four weights each
    let v = Tensor::new(
        vec![3, 4, 1, 1],
        vec![
            3.0, 0.0, 0.0, 0.0, //
            0.5, 0.5, 0.5, 0.5, //
            1.0, 1.0, 1.0, -1.0,
        ],
    )?;
    show("input", &v);
    println!("filter scores {:?}", unit_scores(&v, Scheme::Filter));
    println!("column scores {:?}", unit_scores(&v, Scheme::Column));

    let f = project_filter(&v, 2)?;
    show("keep 2 filters", &f);
    let c = project_column(&v, 2)?;
    show("keep 2 columns", &c);
    let i = project_irregular(&v, 5)?;
    show("keep 5 weights", &i);
    println!(
        "members: {} {} {}",
        membership(&f, Scheme::Filter, 2),
        membership(&c, Scheme::Column, 2),
        membership(&i, Scheme::Irregular, 5)
    );
    Ok(())
}

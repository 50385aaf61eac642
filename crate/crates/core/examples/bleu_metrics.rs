use rarnn::bleu::{bleu, tokenize};
use rarnn::metrics::{accuracy, f_score};

fn main() -> rarnn::Result<()> {
    let candidates = [tokenize("a red dog runs"), tokenize("the the cat")];
    let references = [
        vec![
            tokenize("a red dog runs"),
            tokenize("one red dog is running"),
        ],
        vec![tokenize("the cat sits")],
    ];
    for (n, s) in bleu(&candidates, &references, 4)?.iter().enumerate() {
        println!("BLEU-{}: {s:.4}", n + 1);
    }

    let preds = [1, 0, 1, 1, 0, 0];
    let labels = [1, 0, 0, 1, 0, 1];
    println!("accuracy {:.4}", accuracy(&preds, &labels)?);
    println!("macro F  {:.4}", f_score(&preds, &labels)?);
    Ok(())
}

use super::Post;

/// Every entry of the pseudo image feature vector. Posts without a real
/// image all share this one constant vector.
pub const PSEUDO_FEATURE_VALUE: f64 = 0.5;

/// Gives every post without a real image the constant pseudo feature
/// vector of length `image_dim`. `cmt` flags are left untouched.
pub fn materialize_modalities(posts: &mut [Post], image_dim: usize) {
    for post in posts.iter_mut().filter(|p| !p.cmt) {
        post.image_features = Some(vec![PSEUDO_FEATURE_VALUE; image_dim]);
    }
}

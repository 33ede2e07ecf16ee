"""Statistical shape model toolkit.

Builds point-distribution shape models from corresponded meshes, turns a
one-time annotation of the mean shape into arbitrarily large labeled
point-cloud datasets, trains a rotation-invariant baseline segmenter, and
scores segmentations with per-class IoU.
"""

from .datagen import (DatasetManifest, GenerationConfig, LabeledCloud, fps,
                      generate_dataset, knn_indices, load_manifest, load_xyzl,
                      random_rotation, save_xyzl, shuffle_points)
from .evaluation import (EvalReport, evaluate_dataset, evaluate_pairs,
                         format_report_text, iou, miou_shape)
from .labeling import (AnnotationSet, aggregate_annotations,
                       annotation_accuracy, run_study, transfer_labels)
from .mesh import (BACKGROUND, ClassDef, Cohort, LabelMap, PointCloud,
                   TriangleMesh, load_class_table, load_labels, load_mesh,
                   make_class_table, save_class_table, save_labels, save_mesh,
                   validate_cohort)
from .segmenter import (FeatureConfig, SegmenterModel, TrainConfig,
                        extract_features, load_segmenter, predict,
                        predict_proba, save_segmenter, train)
from .ssm import (SSMModel, as_shape_vector, build_ssm, generate_mesh,
                  generate_shape, gpa_align, load_model, project_shape,
                  sample_params, save_model, shape_to_points)

__version__ = "0.1.0"

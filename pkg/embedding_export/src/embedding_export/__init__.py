from embedding_export.export import ExportManifest, export_embeddings

__all__ = ["ExportManifest", "export_embeddings"]
__version__ = "0.1.0"

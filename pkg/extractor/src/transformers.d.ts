// Optional dependency: present only when pretrained backbones are used.
declare module '@huggingface/transformers'
